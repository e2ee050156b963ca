/** Scripted end-to-end session: drives the real session machine against a
 * live server under node, with a virtual clock and deterministic scripted
 * key presses in place of a human.
 *
 * The run audits, along the way:
 *   - that gamble panes never contain numeric text (outcomes stay hidden),
 *   - the measured gap between left-gamble and both-gambles renders on
 *     every active trial (for a uniformity check on [1500, 3000] ms),
 *   - passive re-queue feedback after a missed response window.
 *
 * Exits 0 and prints a JSON report on success; exits 1 with the error
 * otherwise.
 *
 * Usage:
 *   node dist/e2e/run_session.js --api http://127.0.0.1:8000 \
 *     --session e2e-1 --condition multiplicative --seed 5 \
 *     [--subject s01] [--passive-misses 2] [--active-timeouts 3] [--out report.json]
 */

import { writeFileSync } from "node:fs";
import { makeApi } from "../api.js";
import { runSession } from "../session.js";
import { fastClock, ChoiceEvent, Inputs } from "../timing.js";
import { buildView, collectText, findByClass, ViewState } from "../view.js";
import { View } from "../session.js";
import { ksUniformPValue } from "../stats.js";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`bad argument: ${key}`);
    }
    out.set(key.slice(2), argv[i + 1]);
  }
  return out;
}

/** Deterministic 32-bit PRNG so the scripted run is reproducible. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

interface Script {
  passiveMissesLeft: number;
  activeTimeoutsLeft: number;
  rand: () => number;
}

function scriptedInputs(clock: ReturnType<typeof fastClock>, script: Script): Inputs {
  return {
    async awaitPress(windowMs: number): Promise<number | null> {
      if (script.passiveMissesLeft > 0) {
        script.passiveMissesLeft -= 1;
        await clock.sleep(windowMs);
        return null;
      }
      const rt = 150 + script.rand() * (windowMs - 300);
      await clock.sleep(rt);
      return rt;
    },
    async awaitChoice(windowMs: number): Promise<ChoiceEvent | null> {
      if (script.activeTimeoutsLeft > 0) {
        script.activeTimeoutsLeft -= 1;
        await clock.sleep(windowMs);
        return null;
      }
      const rt = 300 + script.rand() * 2200;
      await clock.sleep(rt);
      return { side: script.rand() < 0.5 ? "left" : "right", rtMs: rt };
    },
  };
}

interface Audit {
  activeViews: number;
  gambleDigitViolations: number;
  requeueMessages: number;
}

function auditingView(audit: Audit): View {
  return {
    show(state: ViewState): void {
      const tree = buildView(state);
      if (state.kind === "active-trial") {
        audit.activeViews += 1;
        for (const pane of findByClass(tree, "gambles")) {
          if (/\d/.test(collectText(pane))) {
            audit.gambleDigitViolations += 1;
          }
        }
      }
      if (state.kind === "passive-feedback" && state.message) {
        audit.requeueMessages += 1;
      }
    },
  };
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv.slice(2));
  const apiUrl = args.get("api") ?? "http://127.0.0.1:8000";
  const sessionId = args.get("session") ?? "e2e-session";
  const condition =
    (args.get("condition") ?? "multiplicative") === "additive"
      ? "additive"
      : "multiplicative";
  const seed = Number(args.get("seed") ?? "0");
  const subject = args.get("subject");
  const passiveMisses = Number(args.get("passive-misses") ?? "2");
  const activeTimeouts = Number(args.get("active-timeouts") ?? "3");

  const api = makeApi(apiUrl, sessionId, () => Promise.resolve());
  const clock = fastClock();
  const script: Script = {
    passiveMissesLeft: passiveMisses,
    activeTimeoutsLeft: activeTimeouts,
    rand: mulberry32(seed * 7919 + 17),
  };
  const audit: Audit = { activeViews: 0, gambleDigitViolations: 0, requeueMessages: 0 };

  const info = await api.createSession(condition, seed, subject);
  const result = await runSession(
    api,
    clock,
    scriptedInputs(clock, script),
    auditingView(audit),
    { interTrialMs: 0 },
  );

  const jitter = result.measuredJitterMs;
  const ksPValue = ksUniformPValue(jitter, 1500, 3000);
  const report = {
    session: info.session,
    condition: info.condition,
    passiveApplied: result.passiveApplied,
    passiveRequeued: result.passiveRequeued,
    activeRecorded: result.activeRecorded,
    activeTimeouts: result.activeTimeouts,
    finalWealth: result.summary.wealth,
    payout: result.summary.payout,
    measuredJitterMs: jitter,
    jitterMinMs: Math.min(...jitter),
    jitterMaxMs: Math.max(...jitter),
    ksPValue,
    audit,
  };

  const problems: string[] = [];
  if (result.activeRecorded !== result.summary.active_total) {
    problems.push(
      `recorded ${result.activeRecorded} of ${result.summary.active_total} active trials`,
    );
  }
  if (result.summary.phase !== "done") {
    problems.push(`session ended in phase ${result.summary.phase}`);
  }
  if (audit.gambleDigitViolations > 0) {
    problems.push(`${audit.gambleDigitViolations} gamble panes contained digits`);
  }
  if (passiveMisses > 0 && audit.requeueMessages < passiveMisses) {
    problems.push(
      `expected ${passiveMisses} re-queue messages, saw ${audit.requeueMessages}`,
    );
  }
  if (problems.length > 0) {
    throw new Error(problems.join("; "));
  }

  const text = JSON.stringify(report, null, 2);
  const out = args.get("out");
  if (out) {
    writeFileSync(out, text);
  }
  console.log(text);
}

main().catch((err) => {
  console.error(err instanceof Error ? err.message : err);
  process.exit(1);
});
