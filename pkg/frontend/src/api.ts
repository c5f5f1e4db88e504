/** Typed client for the annotation service REST API. The UI never mutates
 * server state through anything but submitEnrichment; every read is a GET. */

export interface Task {
  task_id: string;
  video_id: string;
  base_caption: string;
  keyframe_urls: string[];
  auto_context: { enriched_text?: string } | null;
  status: "open" | "submitted" | "approved";
  created_at: string;
  updated_at: string;
}

export interface TaskListPage {
  tasks: Task[];
  total: number;
  page: number;
  page_size: number;
}

export interface Submission {
  task_id: string;
  annotator_id: string;
  enriched_text: string;
  submitted_at: string;
}

export class ApiError extends Error {
  code: string;
  status: number;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.code = code;
    this.status = status;
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  try {
    const body = await resp.json();
    return new ApiError(resp.status, body.code ?? "error", body.message ?? resp.statusText);
  } catch {
    return new ApiError(resp.status, "error", resp.statusText);
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  private async get<T>(path: string): Promise<T> {
    const resp = await fetch(this.url(path));
    if (!resp.ok) throw await parseError(resp);
    return resp.json() as Promise<T>;
  }

  listTasks(status?: string): Promise<TaskListPage> {
    const query = status ? `?status=${encodeURIComponent(status)}` : "";
    return this.get<TaskListPage>(`/tasks${query}`);
  }

  getTask(taskId: string): Promise<Task> {
    return this.get<Task>(`/tasks/${encodeURIComponent(taskId)}`);
  }

  async submitEnrichment(taskId: string, annotatorId: string, text: string): Promise<Submission> {
    const resp = await fetch(this.url(`/tasks/${encodeURIComponent(taskId)}/enrichment`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator_id: annotatorId, enriched_text: text }),
    });
    if (!resp.ok) throw await parseError(resp);
    return resp.json() as Promise<Submission>;
  }
}
