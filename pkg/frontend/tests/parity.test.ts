/**
 * End-to-end parity: the hypothesis-test exercise driven through the real DOM
 * player against a live service instance must finish with the same result the
 * scripted in-process runner reports for the same seed and inputs.
 */
import { execFile, spawn, type ChildProcess } from "node:child_process";
import { promisify } from "node:util";
import * as path from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, type SessionResult } from "../src/api.js";
import { PlayerApp } from "../src/app.js";

const execFileAsync = promisify(execFile);

const REPO_ROOT = path.resolve(__dirname, "..", "..");
const PORT = 8600 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

let service: ChildProcess;

async function waitForService(): Promise<void> {
  const deadline = Date.now() + 60_000;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/exercises`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error("service did not come up in time");
}

beforeAll(async () => {
  service = spawn(
    "python3",
    ["-m", "examforge.cli", "serve", "--listen", `127.0.0.1:${PORT}`,
     "--exercises-dir", "exercises"],
    { cwd: REPO_ROOT, stdio: "ignore" },
  );
  await waitForService();
});

afterAll(() => {
  service?.kill("SIGTERM");
});

async function settle(app: PlayerApp): Promise<void> {
  let chain: Promise<void>;
  do {
    chain = app.settled();
    await chain;
  } while (chain !== app.settled());
}

function setSelect(root: HTMLElement, elementId: string, value: string): void {
  const select = root.querySelector<HTMLSelectElement>(`select[data-element=${elementId}]`);
  expect(select, `select ${elementId}`).not.toBeNull();
  select!.value = value;
  select!.dispatchEvent(new Event("change"));
}

function setText(root: HTMLElement, elementId: string, value: string): void {
  const input = root.querySelector<HTMLInputElement>(`input[data-element=${elementId}]`);
  expect(input, `input ${elementId}`).not.toBeNull();
  input!.value = value;
  input!.dispatchEvent(new Event("input"));
}

function clickSubmit(root: HTMLElement): void {
  root.querySelector<HTMLButtonElement>("button.submit")!.click();
}

function stageId(root: HTMLElement): string | undefined {
  return root.querySelector<HTMLElement>("section.stage")?.dataset.stage;
}

describe("player parity with the scripted runner", () => {
  it("finishes the hypothesis-test walkthrough with the scripted result", async () => {
    // reference run: the in-process scripted session with the same inputs
    const { stdout } = await execFileAsync(
      "python3",
      ["-m", "examforge.cli", "--exercises-dir", "exercises",
       "simulate", path.join("simulations", "hypothesis_walkthrough.json")],
      { cwd: REPO_ROOT },
    );
    const match = stdout.match(/finish\s+total=(\d+) path=(\S+)/);
    expect(match, stdout).not.toBeNull();
    const scriptedTotal = Number(match![1]);
    const scriptedPath = match![2]!.split(">");

    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new PlayerApp(root, new ApiClient(BASE));
    let finished: SessionResult | null = null;
    app.onFinished = (result) => {
      finished = result;
    };

    await app.start("hypothesis-test", "formative", 2024);
    expect(stageId(root)).toBe("tails");
    setSelect(root, "tail", "1");
    clickSubmit(root);
    await settle(app);

    expect(stageId(root)).toBe("distribution");
    setSelect(root, "dist", "1");
    clickSubmit(root);
    await settle(app);

    expect(stageId(root)).toBe("degrees");
    setText(root, "value", "34");
    clickSubmit(root);
    await settle(app);

    expect(stageId(root)).toBe("statistic");
    setText(root, "value", "-0.0568");
    clickSubmit(root);
    await settle(app);

    expect(stageId(root)).toBe("decision");
    setSelect(root, "verdict", "1");
    clickSubmit(root);
    await settle(app);

    expect(finished).not.toBeNull();
    expect(finished!.total).toBe(scriptedTotal);
    expect(finished!.path).toEqual(scriptedPath);
    expect(root.querySelector(".summary")!.textContent).toContain(
      `Final score: ${scriptedTotal} / 100`,
    );
    root.remove();
  });

  it("shows feedback and keeps the field editable on a redo", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new PlayerApp(root, new ApiClient(BASE));
    await app.start("cauchy-cdf", "formative", 2024);

    setText(root, "formula", "tan(x)");
    clickSubmit(root);
    await settle(app);

    expect(stageId(root)).toBe("cdf"); // still the same stage
    const feedback = root.querySelector(".feedback");
    expect(feedback).not.toBeNull();
    expect(feedback!.textContent).toContain("arctangent");
    const input = root.querySelector<HTMLInputElement>("input[data-element=formula]");
    expect(input!.value).toBe("tan(x)"); // draft preserved for the redo
    expect(input!.disabled).toBe(false);
    root.remove();
  });

  it("accumulates hints in order on repeated clicks", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new PlayerApp(root, new ApiClient(BASE));
    await app.start("cauchy-cdf", "formative", 7);

    for (let i = 0; i < 3; i++) {
      root.querySelector<HTMLButtonElement>("button.hint")!.click();
      await settle(app);
    }
    const hints = [...root.querySelectorAll(".hints li")].map((n) => n.textContent ?? "");
    expect(hints).toHaveLength(3);
    expect(hints[0]).toContain("integrate");
    expect(hints[2]!.toLowerCase()).toContain("arctangent");
    // hints exhausted: the service stops advertising the button
    expect(root.querySelector("button.hint")).toBeNull();
    root.remove();
  });

  it("reveals the solution on skip and moves on", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new PlayerApp(root, new ApiClient(BASE));
    await app.start("cauchy-cdf", "formative", 9);

    root.querySelector<HTMLButtonElement>("button.skip")!.click();
    await settle(app);
    expect(stageId(root)).toBe("quantile");
    expect(root.querySelector(".solution")!.textContent).toContain("F(x)");
    root.remove();
  });

  it("summative mode exposes no hint button and no feedback text", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new PlayerApp(root, new ApiClient(BASE));
    await app.start("hypothesis-test", "summative", 2024);

    expect(root.querySelector("button.hint")).toBeNull();

    setSelect(root, "tail", "0"); // wrong on purpose
    clickSubmit(root);
    await settle(app);

    // advanced along the subpath, and nothing evaluative was rendered
    expect(stageId(root)).toBe("left_critical");
    expect(root.querySelector(".feedback")).toBeNull();
    expect(root.querySelector(".hints")).toBeNull();
    expect(root.querySelector(".solution")).toBeNull();
    expect(root.querySelector("button.hint")).toBeNull();
    root.remove();
  });
});
