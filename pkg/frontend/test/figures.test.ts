import { mkdtempSync, readFileSync, statSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { SchemaError, loadCsv } from "../src/csv.js";
import { buildFigure } from "../src/figures/index.js";
import { main } from "../src/cli.js";
import { renderSvg } from "../src/render.js";

const dir = mkdtempSync(join(tmpdir(), "tomlab-figures-"));

function csv(name: string, text: string): string {
  const path = join(dir, name);
  writeFileSync(path, text);
  return path;
}

const POSTERIOR = csv(
  "posterior_curves.csv",
  `# manifest=abc123-s7
n_past,model_prob,oracle_prob,mean_abs_err,stderr,n
0,0.2,0.2,0.01,0.001,200
1,0.95,0.9619,0.02,0.002,200
5,0.99,0.9921,0.01,0.001,200
`,
);

const KL = csv(
  "kl_matrix.csv",
  `# manifest=abc123-s7
model_label,alpha_test,n_past,model_kl,model_stderr,oracle_kl,oracle_stderr,n_agents
0.01,0.01,1,0.15,0.01,0.153,0.004,200
0.01,3,1,2.0,0.05,2.01,0.003,200
3.0,0.01,1,1.3,0.04,1.33,0.001,200
3.0,3,1,0.12,0.01,0.118,0.0005,200
`,
);

const EMB = csv(
  "embeddings.csv",
  `# manifest=abc123-s7
n_past,label,e0,e1
5,prefers-0,0.1,0.2
5,prefers-1,-0.4,0.8
10,prefers-0,0.15,0.3
`,
);

const SALLY = csv(
  "sally_anne.csv",
  `# manifest=abc123-s7
swap_distance,true_delta_pi,pred_delta_pi,n
1,100,88.5,8
2,100,72.1,8
4,0,12.0,8
8,0,3.5,8
`,
);

const DJS = csv(
  "djs_curves.csv",
  `# manifest=abc123-s7
model_label,fov,quantity,swap_distance,true_djs,pred_djs,n
s35,3,policy,1,0.31,0.22,40
s35,3,policy,4,0.0,0.02,31
s35,9,policy,1,0.28,0.2,44
s35,9,policy,4,0.21,0.15,29
s35,3,belief,1,0.4,0.3,40
s35,9,belief,4,0.2,0.18,29
`,
);

function renderTo(name: string, csvPath: string, extra: string[] = []): string {
  const out = join(dir, `${name.replace(/[^a-z-]/g, "")}-${Math.random().toString(36).slice(2)}.svg`);
  const code = main([name, "--csv", csvPath, "--out", out, ...extra]);
  expect(code).toBe(0);
  return out;
}

describe("figure rendering", () => {
  it.each([
    ["posterior-curves", POSTERIOR],
    ["kl-matrix", KL],
    ["embeddings", EMB],
    ["sally-anne", SALLY],
    ["djs-curves", DJS],
  ])("%s renders a non-empty svg", (name, path) => {
    const out = renderTo(name as string, path as string);
    const stat = statSync(out);
    expect(stat.size).toBeGreaterThan(500);
    const text = readFileSync(out, "utf-8");
    expect(text).toContain("<svg");
  });

  it("djs-curves honours the quantity option", () => {
    const out = renderTo("djs-curves", DJS, ["--quantity", "belief"]);
    expect(readFileSync(out, "utf-8")).toContain("belief");
  });

  it("renders an empty-but-valid csv without failing", () => {
    const empty = csv("empty.csv", "n_past,model_prob,oracle_prob\n");
    const out = renderTo("posterior-curves", empty);
    expect(readFileSync(out, "utf-8")).toContain("<svg");
  });

  it("renders a single-row csv", () => {
    const single = csv("single.csv", "n_past,model_prob,oracle_prob\n1,0.9,0.96\n");
    const out = renderTo("posterior-curves", single);
    expect(statSync(out).size).toBeGreaterThan(500);
  });
});

describe("schema validation", () => {
  it("names the missing column", () => {
    const bad = csv("bad.csv", "n_past,who_knows\n0,1\n");
    expect(() => buildFigure("posterior-curves", bad, {})).toThrowError(
      /missing required column 'model_prob'/,
    );
  });

  it("cli exits 1 on schema mismatch", () => {
    const bad = csv("bad2.csv", "model_label,alpha_test\nx,3\n");
    const out = join(dir, "never.svg");
    expect(main(["kl-matrix", "--csv", bad, "--out", out])).toBe(1);
  });

  it("cli exits 1 on unknown figure name", () => {
    expect(main(["nope", "--csv", POSTERIOR, "--out", join(dir, "x.svg")])).toBe(1);
  });

  it("cli exits 2 on missing csv file", () => {
    expect(
      main(["posterior-curves", "--csv", join(dir, "missing.csv"),
            "--out", join(dir, "y.svg")]),
    ).toBe(2);
  });

  it("comment lines are skipped by the loader", () => {
    const rows = loadCsv(POSTERIOR, ["n_past", "model_prob"]);
    expect(rows.length).toBe(3);
    expect(rows[0].n_past).toBe("0");
  });

  it("SchemaError type is exported and thrown", () => {
    const bad = csv("bad3.csv", "a,b\n1,2\n");
    try {
      loadCsv(bad, ["zzz"]);
      expect.unreachable();
    } catch (err) {
      expect(err).toBeInstanceOf(SchemaError);
    }
  });
});

describe("renderSvg", () => {
  it("writes a standalone svg of the requested size", () => {
    const out = join(dir, "direct.svg");
    renderSvg({ xAxis: { type: "value" }, yAxis: { type: "value" },
                series: [{ type: "scatter", data: [[1, 2]] }] }, out, 400, 300);
    const text = readFileSync(out, "utf-8");
    expect(text).toContain('width="400"');
    expect(text).toContain('height="300"');
  });
});
