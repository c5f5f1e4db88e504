/** Single base-URL setting: ?api=... wins, then a window override, then the
 * default local service address. */

export const DEFAULT_API = "http://127.0.0.1:8600";

export function apiBase(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("api");
  if (fromQuery) return fromQuery;
  const override = (window as { VIDINSTRUCT_API?: string }).VIDINSTRUCT_API;
  return override ?? DEFAULT_API;
}
