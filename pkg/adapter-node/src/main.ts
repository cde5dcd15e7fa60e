/**
 * Reference external adapter for the attribeval engine.
 *
 *   node dist/main.js                        serve the bundled classifier on stdio
 *   node dist/main.js --model my.json        serve a user-supplied linear model
 *   node dist/main.js --http 8731            serve over HTTP instead
 *   node dist/main.js --shuffle 4            reply out of order (pipeline testing)
 *
 * The model JSON uses the engine's linear config schema:
 *   {"type": "linear", "mask_token": str, "bias": [..], "weights": {token: [..]}}
 * Hooking a heavier runtime means replacing LinearBowClassifier with an object
 * exposing probs()/gradDot() and advertising its real capabilities.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import * as url from "node:url";
import { LinearBowClassifier, LinearConfig } from "./classifier.js";
import { makeHttpServer, serveStdio } from "./server.js";

const HERE = path.dirname(url.fileURLToPath(import.meta.url));
const DEFAULT_MODEL = path.join(HERE, "..", "models", "default.json");

interface Options {
  modelPath: string;
  httpPort: number | null;
  shuffleWindow: number;
}

function parseArgs(argv: string[]): Options {
  const opts: Options = { modelPath: DEFAULT_MODEL, httpPort: null, shuffleWindow: 0 };
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--model":
        opts.modelPath = argv[++i];
        break;
      case "--http":
        opts.httpPort = Number(argv[++i]);
        break;
      case "--shuffle":
        opts.shuffleWindow = Number(argv[++i]);
        break;
      default:
        process.stderr.write(`unknown flag ${argv[i]}\n`);
        process.exit(2);
    }
  }
  return opts;
}

function loadModel(modelPath: string): LinearBowClassifier {
  const raw = JSON.parse(fs.readFileSync(modelPath, "utf-8"));
  // accept either a bare linear config or the engine's models.json bundle
  const config = (raw.linear ?? raw) as LinearConfig;
  if (config.type && config.type !== "linear") {
    process.stderr.write(`model type ${config.type} is not servable by this adapter\n`);
    process.exit(2);
  }
  return new LinearBowClassifier(config);
}

const opts = parseArgs(process.argv.slice(2));
const model = loadModel(opts.modelPath);
if (opts.httpPort !== null) {
  makeHttpServer(model).listen(opts.httpPort, "127.0.0.1");
} else {
  serveStdio(model, opts.shuffleWindow);
}
