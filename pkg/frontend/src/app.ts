import { ApiClient, ApiError, Task } from "./api";
import { clearDraft, loadDraft, saveDraft } from "./drafts";

/** Advisory reminders for what a good enrichment covers; never blocking. */
export const ENRICHMENT_CHECKLIST = [
  "Physical appearance",
  "Spatial layout",
  "Temporal localization",
  "Relationships between people and objects",
  "Reasoning about what happens",
  "Chronological order of events",
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class App {
  constructor(
    readonly api: ApiClient,
    readonly root: HTMLElement,
    readonly annotatorId: string = "annotator",
  ) {}

  async showList(status?: string): Promise<void> {
    this.root.replaceChildren(el("p", "loading", "Loading tasks..."));
    let page;
    try {
      page = await this.api.listTasks(status);
    } catch (err) {
      this.renderListError(err as Error, status);
      return;
    }
    const view = el("div", "task-list");
    view.appendChild(el("h1", undefined, "Annotation queue"));
    if (page.tasks.length === 0) {
      view.appendChild(el("p", "empty-state", "No tasks"));
      this.root.replaceChildren(view);
      return;
    }
    const table = el("table", "task-table");
    const head = el("thead");
    const headRow = el("tr");
    for (const title of ["Task", "Video", "Status"]) {
      headRow.appendChild(el("th", undefined, title));
    }
    head.appendChild(headRow);
    table.appendChild(head);
    const body = el("tbody");
    for (const task of page.tasks) {
      const row = el("tr", "task-row");
      row.dataset.taskId = task.task_id;
      row.dataset.status = task.status;
      row.appendChild(el("td", "task-id", task.task_id));
      row.appendChild(el("td", "video-id", task.video_id));
      row.appendChild(el("td", "status", task.status));
      row.addEventListener("click", () => void this.openTask(task.task_id));
      body.appendChild(row);
    }
    table.appendChild(body);
    view.appendChild(table);
    this.root.replaceChildren(view);
  }

  private renderListError(err: Error, status?: string): void {
    const view = el("div", "task-list");
    const banner = el("div", "error-banner");
    banner.appendChild(el("span", "error-message", `Could not load tasks: ${err.message}`));
    const retry = el("button", "retry", "Retry");
    retry.addEventListener("click", () => void this.showList(status));
    banner.appendChild(retry);
    view.appendChild(banner);
    this.root.replaceChildren(view);
  }

  async openTask(taskId: string): Promise<void> {
    let task;
    try {
      task = await this.api.getTask(taskId);
    } catch (err) {
      this.renderListError(err as Error);
      return;
    }
    this.renderTask(task);
  }

  renderTask(task: Task): void {
    const view = el("div", "task-view");
    view.dataset.taskId = task.task_id;

    const back = el("button", "back", "Back to queue");
    back.addEventListener("click", () => void this.showList());
    view.appendChild(back);

    const header = el("h1", undefined, task.video_id);
    header.appendChild(el("span", "status", ` [${task.status}]`));
    view.appendChild(header);

    const strip = el("div", "keyframe-strip");
    for (const url of task.keyframe_urls) {
      const img = el("img", "keyframe");
      img.src = this.api.url(url);
      img.alt = url;
      strip.appendChild(img);
    }
    view.appendChild(strip);

    const captionPanel = el("section", "base-caption-panel");
    captionPanel.appendChild(el("h2", undefined, "Base caption"));
    // textContent keeps the server's caption byte-identical, no normalization
    captionPanel.appendChild(el("pre", "base-caption", task.base_caption));
    view.appendChild(captionPanel);

    const hintText = task.auto_context?.enriched_text;
    if (hintText) {
      const details = document.createElement("details");
      details.className = "auto-context";
      const summary = el("summary", undefined, "Machine-generated context (hint)");
      details.appendChild(summary);
      details.appendChild(el("pre", "auto-context-text", hintText));
      view.appendChild(details);
    }

    const editor = el("section", "editor");
    const checklist = el("ul", "checklist");
    for (const item of ENRICHMENT_CHECKLIST) {
      const li = el("li");
      const label = el("label");
      const box = document.createElement("input");
      box.type = "checkbox";
      label.appendChild(box);
      label.appendChild(document.createTextNode(" " + item));
      li.appendChild(label);
      checklist.appendChild(li);
    }
    editor.appendChild(checklist);

    const textarea = document.createElement("textarea");
    textarea.className = "enrichment-editor";
    textarea.placeholder = "Write the enriched caption here...";
    textarea.value = loadDraft(task.task_id);
    const counter = el("span", "char-count", `${textarea.value.length} chars`);
    textarea.addEventListener("input", () => {
      counter.textContent = `${textarea.value.length} chars`;
      saveDraft(task.task_id, textarea.value);
    });
    editor.appendChild(textarea);
    editor.appendChild(counter);

    const errorBox = el("div", "submit-error");
    errorBox.hidden = true;
    editor.appendChild(errorBox);

    const submit = el("button", "submit", "Submit enrichment");
    submit.addEventListener("click", async () => {
      const text = textarea.value;
      if (!text.trim()) {
        errorBox.hidden = false;
        errorBox.textContent = "Enrichment text is required.";
        return;
      }
      submit.disabled = true;
      try {
        await this.api.submitEnrichment(task.task_id, this.annotatorId, text);
      } catch (err) {
        errorBox.hidden = false;
        errorBox.textContent =
          err instanceof ApiError ? `${err.message} (${err.code})` : String(err);
        submit.disabled = false;
        return;
      }
      clearDraft(task.task_id);
      await this.showList();
    });
    editor.appendChild(submit);
    view.appendChild(editor);

    this.root.replaceChildren(view);
  }
}
