/**
 * Figure renderer for tomlab experiment CSVs.
 *
 *   node dist/cli.js <figure> --csv metrics.csv --out figure.svg [--quantity policy]
 *
 * Consumes CSV files only; never touches the primary component's code.
 * Exit codes: 0 rendered, 1 usage or schema error, 2 I/O error.
 */

import { SchemaError } from "./csv.js";
import { FIGURES, buildFigure } from "./figures/index.js";
import { renderSvg } from "./render.js";

function parseArgs(argv: string[]) {
  const [name, ...rest] = argv;
  const opts: Record<string, string> = {};
  for (let i = 0; i < rest.length; i += 2) {
    const flag = rest[i];
    if (!flag.startsWith("--") || rest[i + 1] === undefined) {
      throw new Error(`bad argument '${flag}'`);
    }
    opts[flag.slice(2)] = rest[i + 1];
  }
  return { name, opts };
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs(argv);
  } catch (err) {
    console.error(String(err));
    return 1;
  }
  const { name, opts } = parsed;
  if (!name || !opts.csv || !opts.out) {
    console.error(
      `usage: figure <name> --csv PATH --out PATH.svg [--quantity Q]\n` +
        `figures: ${Object.keys(FIGURES).join(", ")}`,
    );
    return 1;
  }
  try {
    const option = buildFigure(name, opts.csv, opts);
    renderSvg(option, opts.out);
    console.log(`wrote ${opts.out}`);
    return 0;
  } catch (err) {
    if (err instanceof SchemaError || err instanceof Error && err.message.startsWith("unknown figure")) {
      console.error(String(err));
      return 1;
    }
    if ((err as NodeJS.ErrnoException).code !== undefined) {
      console.error(String(err));
      return 2;
    }
    console.error(String(err));
    return 1;
  }
}

const invokedDirectly = process.argv[1]?.endsWith("cli.js");
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
