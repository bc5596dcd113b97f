import { Row, groupBy, loadCsv, num } from "../csv.js";
import type { EChartsOption } from "../render.js";

export interface FigureSpec {
  name: string;
  requiredColumns: string[];
  build: (rows: Row[], opts: Record<string, string>) => EChartsOption;
}

/** Model dots over analytic oracle lines, per observation count. */
const posteriorCurves: FigureSpec = {
  name: "posterior-curves",
  requiredColumns: ["n_past", "model_prob", "oracle_prob"],
  build(rows) {
    const sorted = [...rows].sort((a, b) => num(a, "n_past") - num(b, "n_past"));
    return {
      title: { text: "Predicted probability of the repeated action" },
      xAxis: { type: "category", name: "past observations",
               data: sorted.map((r) => r.n_past) },
      yAxis: { type: "value", name: "p(action)", min: 0, max: 1 },
      legend: { bottom: 0 },
      series: [
        {
          name: "analytic posterior",
          type: "line",
          data: sorted.map((r) => num(r, "oracle_prob")),
        },
        {
          name: "observer network",
          type: "scatter",
          symbolSize: 12,
          data: sorted.map((r) => num(r, "model_prob")),
        },
      ],
    };
  },
};

/** Heatmap of KL(true policy, predictive) per train/test species pair. */
const klMatrix: FigureSpec = {
  name: "kl-matrix",
  requiredColumns: ["model_label", "alpha_test", "model_kl"],
  build(rows) {
    const trains = [...new Set(rows.map((r) => r.model_label))];
    const tests = [...new Set(rows.map((r) => r.alpha_test))].sort(
      (a, b) => Number(a) - Number(b),
    );
    const cells = rows.map((r) => [
      tests.indexOf(r.alpha_test),
      trains.indexOf(r.model_label),
      num(r, "model_kl"),
    ]);
    const max = Math.max(0, ...cells.map((c) => c[2] as number));
    return {
      title: { text: "KL(true policy ∥ prediction)" },
      xAxis: { type: "category", name: "test species α", data: tests },
      yAxis: { type: "category", name: "trained on", data: trains },
      visualMap: { min: 0, max, calculable: true, orient: "horizontal", bottom: 0 },
      series: [{
        type: "heatmap",
        label: { show: true, formatter: (p: any) => p.value[2].toFixed(2) },
        data: cells,
      }],
    };
  },
};

/** Character-embedding scatter, colour-coded by the hidden label. */
const embeddings: FigureSpec = {
  name: "embeddings",
  requiredColumns: ["label", "e0", "e1"],
  build(rows) {
    const byLabel = groupBy(rows, (r) => r.label);
    return {
      title: { text: "Character embeddings" },
      xAxis: { type: "value", name: "e0" },
      yAxis: { type: "value", name: "e1" },
      legend: { type: "scroll", bottom: 0 },
      series: [...byLabel.entries()].map(([label, pts]) => ({
        name: label,
        type: "scatter" as const,
        symbolSize: 7,
        data: pts.map((r) => [num(r, "e0"), num(r, "e1")]),
      })),
    };
  },
};

/** True vs predicted policy reduction across swap distances. */
const sallyAnne: FigureSpec = {
  name: "sally-anne",
  requiredColumns: ["swap_distance", "true_delta_pi", "pred_delta_pi"],
  build(rows) {
    const sorted = [...rows].sort(
      (a, b) => num(a, "swap_distance") - num(b, "swap_distance"),
    );
    return {
      title: { text: "Sally-Anne probe: return-action reduction" },
      xAxis: { type: "category", name: "swap distance",
               data: sorted.map((r) => r.swap_distance) },
      yAxis: { type: "value", name: "Δπ (%)" },
      legend: { bottom: 0 },
      series: [
        { name: "agent ground truth", type: "bar",
          data: sorted.map((r) => num(r, "true_delta_pi")) },
        { name: "observer prediction", type: "bar",
          data: sorted.map((r) => num(r, "pred_delta_pi")) },
      ],
    };
  },
};

/** D_JS between counterfactual branches vs swap distance, per fov. */
const djsCurves: FigureSpec = {
  name: "djs-curves",
  requiredColumns: ["model_label", "fov", "quantity", "swap_distance",
                    "true_djs", "pred_djs"],
  build(rows, opts) {
    const quantity = opts.quantity ?? "policy";
    const subset = rows.filter((r) => r.quantity === quantity);
    const distances = [...new Set(subset.map((r) => num(r, "swap_distance")))]
      .sort((a, b) => a - b);
    const groups = groupBy(subset, (r) => `${r.model_label} fov=${r.fov}`);
    const series: any[] = [];
    for (const [label, pts] of groups.entries()) {
      const byDist = new Map(pts.map((r) => [num(r, "swap_distance"), r]));
      series.push({
        name: `${label} predicted`,
        type: "line",
        data: distances.map((d) => {
          const row = byDist.get(d);
          return row ? num(row, "pred_djs") : null;
        }),
      });
      series.push({
        name: `${label} true`,
        type: "line",
        lineStyle: { type: "dashed" },
        data: distances.map((d) => {
          const row = byDist.get(d);
          return row ? num(row, "true_djs") : null;
        }),
      });
    }
    return {
      title: { text: `Jensen-Shannon divergence (${quantity})` },
      xAxis: { type: "category", name: "swap distance", data: distances },
      yAxis: { type: "value", name: "D_JS" },
      legend: { type: "scroll", bottom: 0 },
      series,
    };
  },
};

export const FIGURES: Record<string, FigureSpec> = Object.fromEntries(
  [posteriorCurves, klMatrix, embeddings, sallyAnne, djsCurves].map((f) => [
    f.name,
    f,
  ]),
);

export function buildFigure(
  name: string,
  csvPath: string,
  opts: Record<string, string>,
): EChartsOption {
  const spec = FIGURES[name];
  if (!spec) {
    throw new Error(
      `unknown figure '${name}' (available: ${Object.keys(FIGURES).join(", ")})`,
    );
  }
  const rows = loadCsv(csvPath, spec.requiredColumns);
  return spec.build(rows, opts);
}
