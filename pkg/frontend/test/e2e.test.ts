// End-to-end: real service process, real HTTP, the console app driven
// inside jsdom. Opt in with NEWVISION_E2E=1 (or use npm run test:e2e).
// Point NEWVISION_E2E_CKPT at a trained checkpoint to skip the quick
// training pass the suite otherwise runs once and caches under /tmp.

import { spawn, spawnSync } from "node:child_process";
import type { ChildProcess } from "node:child_process";
import { existsSync, mkdirSync, readFileSync, writeFileSync }
  from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { App, POLL_MS } from "../src/app";
import { Client } from "../src/api";

const here = dirname(fileURLToPath(import.meta.url));
const page = readFileSync(join(here, "../index.html"), "utf8");
const body = page.slice(page.indexOf("<body>") + 6, page.indexOf("</body>"))
  .replace(/<script[^>]*><\/script>/, "");

const enabled = !!process.env.NEWVISION_E2E;
const CACHE = "/tmp/newvision-e2e";

function sleep(ms: number) {
  return new Promise(r => setTimeout(r, ms));
}

function trainCheckpoint(): string {
  const given = process.env.NEWVISION_E2E_CKPT;
  if (given) return given;
  const ckpt = join(CACHE, "pre.ckpt");
  if (existsSync(ckpt)) return ckpt;
  mkdirSync(CACHE, { recursive: true });
  let r = spawnSync("python3", ["-m", "newvision.cli", "gen-data",
                                "--out", join(CACHE, "corpus"),
                                "--train", "16", "--eval", "4",
                                "--seed", "0"]);
  expect(r.status, String(r.stderr)).toBe(0);
  const cfg = { stage: "pretrain", corpus: join(CACHE, "corpus"),
                steps: 300, batch_size: 8, lr: 5e-4, seed: 0, out: ckpt };
  writeFileSync(join(CACHE, "pretrain.json"), JSON.stringify(cfg));
  r = spawnSync("python3", ["-m", "newvision.cli", "train",
                            "--stage", "pretrain",
                            "--config", join(CACHE, "pretrain.json")],
                { timeout: 240_000 });
  expect(r.status, String(r.stderr)).toBe(0);
  return ckpt;
}

(enabled ? describe : describe.skip)("console against a live service", () => {
  let server: ChildProcess;
  let base = "";

  beforeAll(async () => {
    const ckpt = trainCheckpoint();
    server = spawn("python3", ["-m", "newvision.cli", "serve",
                               "--ckpt", ckpt],
                   { env: { ...process.env, NEWVISION_PORT: "0" },
                     stdio: ["ignore", "pipe", "pipe"] });
    const port = await new Promise<number>((resolve, reject) => {
      let buf = "";
      server.stdout!.on("data", (chunk: Buffer) => {
        buf += chunk.toString();
        const line = buf.split("\n")[0];
        if (buf.includes("\n")) resolve(JSON.parse(line).port);
      });
      server.on("exit", code => reject(new Error(`server died: ${code}`)));
      setTimeout(() => reject(new Error("server start timed out")), 30_000);
    });
    base = `http://127.0.0.1:${port}`;
  });

  afterAll(() => {
    server?.kill("SIGINT");
  });

  it("loads a scene deterministically", async () => {
    document.body.innerHTML = body;
    const app = new App(document, base);
    await app.loadScene(0);
    expect(app.sceneId).toBe(0);
    expect(app.image).not.toBeNull();
    expect(app.image!.width).toBe(32);
    const canvas = document.getElementById("scene-canvas") as
      HTMLCanvasElement;
    expect(canvas.width).toBe(256);

    const client = new Client(base);
    const a = await client.randomScene(5);
    const b = await client.randomScene(5);
    expect(b.image.rgb).toEqual(a.image.rgb);
  });

  it("answers the two headline commands with tagged replies", async () => {
    document.body.innerHTML = body;
    const app = new App(document, base);
    await app.loadScene(0);

    await app.submitCommand("What is that?");
    let reply = app.entries.at(-1)!;
    expect(reply.author).toBe("device");
    expect(reply.intent).toBe("IdentifyObject");
    expect(reply.text.length).toBeGreaterThan(0);

    await app.submitCommand("Navigate to the front door");
    reply = app.entries.at(-1)!;
    expect(reply.author).toBe("device");
    expect(reply.intent).toBe("Navigate");
    expect(reply.text).toMatch(/forward|turn|arrived/);

    const tags = document.querySelectorAll("#messages .tag");
    expect(tags.length).toBeGreaterThanOrEqual(2);
  });

  it("raises the failsafe banner within one poll of killing the modules",
     async () => {
    document.body.innerHTML = body;
    const app = new App(document, base);
    const client = new Client(base);
    // reset to healthy, start from a clean slate
    for (const name of ["perception", "navigation", "ranging"]) {
      await client.setModuleHealth(name, true);
    }
    app.startPolling();
    try {
      await sleep(50);
      expect(document.getElementById("failsafe-banner")!.hidden)
        .toBe(true);
      for (const name of ["perception", "navigation", "ranging"]) {
        await client.setModuleHealth(name, false);
      }
      await sleep(POLL_MS + 500);
      expect(document.getElementById("failsafe-banner")!.hidden)
        .toBe(false);
      expect(document.getElementById("mode-badge")!.textContent)
        .toBe("Failsafe");
    } finally {
      app.stopPolling();
      for (const name of ["perception", "navigation", "ranging"]) {
        await client.setModuleHealth(name, true);
      }
    }
  });
});
