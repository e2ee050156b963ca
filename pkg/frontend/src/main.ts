/** Browser entry point.
 *
 * Query parameters:
 *   session    session identifier (default: random)
 *   condition  "additive" | "multiplicative" (default: additive)
 *   seed       schedule seed (default: 0)
 *   subject    optional subject label
 *   api        API origin (default: same origin)
 */

import { makeApi } from "./api.js";
import { domView } from "./render.js";
import { runSession } from "./session.js";
import { domKeySource, makeInputs, realClock } from "./timing.js";

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const sessionId =
    params.get("session") ?? `web-${Math.random().toString(36).slice(2, 10)}`;
  const condition =
    params.get("condition") === "multiplicative" ? "multiplicative" : "additive";
  const seed = Number(params.get("seed") ?? "0");
  const subject = params.get("subject") ?? undefined;
  const baseUrl = params.get("api") ?? window.location.origin;

  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app mount point");
  }

  const api = makeApi(baseUrl, sessionId);
  const clock = realClock();
  const inputs = makeInputs(domKeySource(window, clock), clock);
  const view = domView(root);

  await api.createSession(condition, seed, subject);
  const result = await runSession(api, clock, inputs, view);
  console.log("session finished", {
    session: sessionId,
    passiveApplied: result.passiveApplied,
    activeRecorded: result.activeRecorded,
    wealth: result.summary.wealth,
  });
}

boot().catch((err) => {
  const root = document.getElementById("app");
  if (root) {
    const box = document.createElement("div");
    box.className = "message";
    box.textContent = `Something went wrong: ${err instanceof Error ? err.message : err}`;
    root.replaceChildren(box);
  }
  console.error(err);
});
