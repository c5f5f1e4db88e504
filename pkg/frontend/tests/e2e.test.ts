/** End-to-end flow against a live annotation service: list, render, draft,
 * block empty submits, submit, and surface server-side immutability. */

import { afterAll, beforeAll, beforeEach, describe, expect, it } from "vitest";
import { join } from "node:path";

import { ApiClient } from "../src/api";
import { App } from "../src/app";
import {
  REPO_ROOT, Service, createTask, startService, stopService, waitFor,
} from "./helpers";

const FRAMES = [
  ...[0, 1, 2, 3, 4, 5].map((i) =>
    join(REPO_ROOT, "tests/data/videos/vidA", `frame_00000${i}.png`)),
  join(REPO_ROOT, "tests/data/videos/vidB", "frame_000004.png"),
  join(REPO_ROOT, "tests/data/videos/vidB", "frame_000005.png"),
];

const ODD_CAPTION = "A man  cooks\ttwo eggs.  No normalization wanted. ";

let service: Service;
let strip: string;   // task with 8 keyframes
let hinted: string;  // task with machine context
let plain: string;   // task with the odd caption

beforeAll(async () => {
  service = await startService();
  strip = await createTask(service.baseUrl, "vid-strip", "eight keyframes here", FRAMES);
  hinted = await createTask(service.baseUrl, "vid-hinted", "hinted base caption", [], {
    enriched_text: "machine suggestion text",
  });
  plain = await createTask(service.baseUrl, "vid-plain", ODD_CAPTION);
});

afterAll(() => {
  if (service) stopService(service);
});

function freshApp(baseUrl = service.baseUrl): App {
  const root = document.createElement("div");
  document.body.replaceChildren(root);
  return new App(new ApiClient(baseUrl), root, "tester");
}

beforeEach(() => {
  localStorage.clear();
});

describe("task list", () => {
  it("lists all three fixture tasks", async () => {
    const app = freshApp();
    await app.showList();
    const rows = app.root.querySelectorAll(".task-row");
    expect(rows.length).toBe(3);
    const videos = [...rows].map((r) => r.querySelector(".video-id")!.textContent);
    expect(videos).toContain("vid-strip");
    expect(videos).toContain("vid-hinted");
    expect(videos).toContain("vid-plain");
  });

  it("shows an error banner with retry when the service is unreachable", async () => {
    const app = freshApp("http://127.0.0.1:9");
    await app.showList();
    expect(app.root.querySelector(".error-banner")).not.toBeNull();
    expect(app.root.querySelector("button.retry")).not.toBeNull();
  });

  it("shows the empty state when no tasks match the filter", async () => {
    const app = freshApp();
    await app.showList("approved");
    expect(app.root.querySelector(".empty-state")?.textContent).toBe("No tasks");
  });
});

describe("task view", () => {
  it("renders 8 keyframes in order", async () => {
    const app = freshApp();
    await app.openTask(strip);
    const task = await new ApiClient(service.baseUrl).getTask(strip);
    const imgs = [...app.root.querySelectorAll("img.keyframe")];
    expect(imgs.length).toBe(8);
    const expected = task.keyframe_urls.map((u) => app.api.url(u));
    expect(imgs.map((img) => (img as HTMLImageElement).src)).toEqual(expected);
  });

  it("renders the base caption byte-identical", async () => {
    const app = freshApp();
    await app.openTask(plain);
    expect(app.root.querySelector(".base-caption")!.textContent).toBe(ODD_CAPTION);
  });

  it("shows the machine-context hint only when present", async () => {
    const app = freshApp();
    await app.openTask(hinted);
    const hint = app.root.querySelector("details.auto-context");
    expect(hint).not.toBeNull();
    expect(hint!.querySelector(".auto-context-text")!.textContent)
      .toBe("machine suggestion text");

    await app.openTask(plain);
    expect(app.root.querySelector("details.auto-context")).toBeNull();
  });

  it("keeps the draft across a reload until submission", async () => {
    const app = freshApp();
    await app.openTask(plain);
    const editor = app.root.querySelector(".enrichment-editor") as HTMLTextAreaElement;
    editor.value = "work in progress";
    editor.dispatchEvent(new Event("input"));
    expect(app.root.querySelector(".char-count")!.textContent).toBe("16 chars");

    const remounted = freshAppKeepingStorage();
    await remounted.openTask(plain);
    const restored = remounted.root.querySelector(".enrichment-editor") as HTMLTextAreaElement;
    expect(restored.value).toBe("work in progress");
  });
});

function freshAppKeepingStorage(): App {
  const root = document.createElement("div");
  document.body.replaceChildren(root);
  return new App(new ApiClient(service.baseUrl), root, "tester");
}

describe("submission", () => {
  it("blocks empty submissions client-side", async () => {
    const app = freshApp();
    await app.openTask(strip);
    (app.root.querySelector("button.submit") as HTMLButtonElement).click();
    await waitFor(() => !(app.root.querySelector(".submit-error") as HTMLElement).hidden);
    expect(app.root.querySelector(".submit-error")!.textContent)
      .toBe("Enrichment text is required.");
    // still on the task view, nothing sent
    expect(app.root.querySelector(".task-view")).not.toBeNull();
    const fresh = await new ApiClient(service.baseUrl).getTask(strip);
    expect(fresh.status).toBe("open");
  });

  it("submits and flips the task to submitted in the list", async () => {
    const app = freshApp();
    await app.openTask(strip);
    const editor = app.root.querySelector(".enrichment-editor") as HTMLTextAreaElement;
    editor.value = "a detailed enriched caption from the tester";
    editor.dispatchEvent(new Event("input"));
    (app.root.querySelector("button.submit") as HTMLButtonElement).click();

    await waitFor(() => app.root.querySelector(".task-list") !== null);
    const row = app.root.querySelector(`.task-row[data-task-id="${strip}"]`)!;
    expect(row.getAttribute("data-status")).toBe("submitted");
    expect(row.querySelector(".status")!.textContent).toBe("submitted");
    // draft is gone after a successful submit
    expect(localStorage.getItem(`vidinstruct-draft:${strip}`)).toBeNull();
  });

  it("surfaces the server's immutability error inline", async () => {
    const taskId = await createTask(service.baseUrl, "vid-locked", "locked caption");
    await fetch(`${service.baseUrl}/tasks/${taskId}/enrichment`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator_id: "x", enriched_text: "approved text" }),
    });
    await fetch(`${service.baseUrl}/tasks/${taskId}/approve`, { method: "POST" });

    const app = freshApp();
    await app.openTask(taskId);
    const editor = app.root.querySelector(".enrichment-editor") as HTMLTextAreaElement;
    editor.value = "should be rejected";
    editor.dispatchEvent(new Event("input"));
    (app.root.querySelector("button.submit") as HTMLButtonElement).click();

    await waitFor(() => !(app.root.querySelector(".submit-error") as HTMLElement).hidden);
    expect(app.root.querySelector(".submit-error")!.textContent)
      .toContain("immutable_task");
    expect(app.root.querySelector(".task-view")).not.toBeNull();
  });
});
