import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";

// vitest runs with cwd = frontend/, one level below the repository root
export const REPO_ROOT = resolve(process.cwd(), "..");

export interface Service {
  proc: ChildProcess;
  baseUrl: string;
  storeDir: string;
}

/** Spawn a real annotation service on a random loopback port. */
export async function startService(storeDir?: string): Promise<Service> {
  const dir = storeDir ?? mkdtempSync(join(tmpdir(), "vidinstruct-ui-"));
  const proc = spawn("python3", [
    "-m", "vidinstruct.cli", "serve", "--store", dir, "--listen", "127.0.0.1:0",
  ], { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "inherit"] });

  const baseUrl = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("service never started")), 30_000);
    let buffer = "";
    proc.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/http:\/\/127\.0\.0\.1:\d+/);
      if (match) {
        clearTimeout(timer);
        resolve(match[0]);
      }
    });
    proc.on("exit", (code) => reject(new Error(`service exited early: ${code}`)));
  });

  for (let i = 0; i < 200; i++) {
    try {
      const resp = await fetch(`${baseUrl}/health`);
      if (resp.ok) break;
    } catch {
      await sleep(50);
    }
  }
  return { proc, baseUrl, storeDir: dir };
}

export function stopService(service: Service): void {
  service.proc.kill("SIGKILL");
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export async function waitFor(
  predicate: () => boolean,
  timeoutMs = 10_000,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (predicate()) return;
    await sleep(20);
  }
  throw new Error("condition never became true");
}

/** Create a task through the REST API; keyframes are server-local paths. */
export async function createTask(
  baseUrl: string,
  videoId: string,
  baseCaption: string,
  keyframes: string[] = [],
  autoContext?: object,
): Promise<string> {
  const resp = await fetch(`${baseUrl}/tasks`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({
      video_id: videoId,
      base_caption: baseCaption,
      keyframes,
      auto_context: autoContext ?? null,
    }),
  });
  if (!resp.ok) throw new Error(`create_task failed: ${resp.status}`);
  const body = await resp.json();
  return body.task_id as string;
}
