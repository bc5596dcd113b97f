import { writeFileSync } from "node:fs";
import { createRequire } from "node:module";

// echarts publishes CommonJS-style types (`export =`) next to an ESM entry;
// loading through require keeps types and runtime in agreement under Node.
const echarts = createRequire(import.meta.url)("echarts") as typeof import("echarts");

export type EChartsOption = import("echarts").EChartsOption;

/** Render an ECharts option to a standalone SVG file (server-side). */
export function renderSvg(
  option: EChartsOption,
  outPath: string,
  width = 760,
  height = 520,
): void {
  const chart = echarts.init(null, null, {
    renderer: "svg",
    ssr: true,
    width,
    height,
  });
  chart.setOption({ animation: false, ...option });
  const svg = chart.renderToSVGString();
  chart.dispose();
  writeFileSync(outPath, svg, "utf-8");
}
