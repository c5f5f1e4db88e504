/** Draft text lives in localStorage until a submission succeeds, so a page
 * reload never loses annotator work. */

const PREFIX = "vidinstruct-draft:";

export function loadDraft(taskId: string): string {
  return localStorage.getItem(PREFIX + taskId) ?? "";
}

export function saveDraft(taskId: string, text: string): void {
  if (text) {
    localStorage.setItem(PREFIX + taskId, text);
  } else {
    localStorage.removeItem(PREFIX + taskId);
  }
}

export function clearDraft(taskId: string): void {
  localStorage.removeItem(PREFIX + taskId);
}
