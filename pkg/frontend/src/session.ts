/** Session state machine: drives one full experimental session against the
 * HTTP API, independent of any rendering technology or real clock.
 *
 * Passive trials: show the symbol, raise the white-framed cue, accept a
 * press inside the response window, report press or timeout. A press the
 * server rules late re-queues the symbol and the subject is told to press
 * earlier.
 *
 * Active trials: the left gamble appears alone, then after the
 * server-specified jitter the right gamble joins it; the response window
 * opens at that moment. The measured gap between the two renders is
 * recorded so the timing distribution can be audited.
 */

import {
  ActiveDescriptor,
  Api,
  PassiveDescriptor,
  ResponseBody,
  Summary,
} from "./api.js";
import { Clock, Inputs } from "./timing.js";
import { ViewState } from "./view.js";

export interface View {
  show(state: ViewState): void;
}

export interface SessionHooks {
  /** Pause between feedback and the next trial, in ms (0 in tests). */
  interTrialMs?: number;
}

export interface SessionResult {
  passiveApplied: number;
  passiveRequeued: number;
  activeRecorded: number;
  activeTimeouts: number;
  measuredJitterMs: number[];
  summary: Summary;
}

export async function runSession(
  api: Api,
  clock: Clock,
  inputs: Inputs,
  view: View,
  hooks: SessionHooks = {},
): Promise<SessionResult> {
  const pauseMs = hooks.interTrialMs ?? 400;
  const measuredJitterMs: number[] = [];
  let passiveApplied = 0;
  let passiveRequeued = 0;
  let activeRecorded = 0;
  let activeTimeouts = 0;

  for (;;) {
    const descriptor = await api.nextTrial();
    if (descriptor.phase === "done") {
      break;
    }
    if (descriptor.phase === "passive") {
      const requeued = await runPassiveTrial(api, clock, inputs, view, descriptor, pauseMs);
      if (requeued) {
        passiveRequeued += 1;
      } else {
        passiveApplied += 1;
      }
    } else {
      const { timedOut, jitter } = await runActiveTrial(
        api,
        clock,
        inputs,
        view,
        descriptor,
        pauseMs,
      );
      measuredJitterMs.push(jitter);
      activeRecorded += 1;
      if (timedOut) {
        activeTimeouts += 1;
      }
    }
  }

  const summary = await api.summary();
  view.show({
    kind: "done",
    wealth: summary.wealth,
    payoutAmount: summary.payout ? summary.payout.amount : null,
    activeRecorded: summary.active_recorded,
  });
  return {
    passiveApplied,
    passiveRequeued,
    activeRecorded,
    activeTimeouts,
    measuredJitterMs,
    summary,
  };
}

async function runPassiveTrial(
  api: Api,
  clock: Clock,
  inputs: Inputs,
  view: View,
  descriptor: PassiveDescriptor,
  pauseMs: number,
): Promise<boolean> {
  const base = {
    wealth: descriptor.wealth,
    stimulus: descriptor.stimulus,
    position: descriptor.position,
    total: descriptor.remaining + descriptor.position,
  };
  view.show({ kind: "passive-cue", ...base, cued: false });
  await clock.sleep(pauseMs);
  view.show({ kind: "passive-cue", ...base, cued: true });
  const rt = await inputs.awaitPress(descriptor.window_ms);
  const body: ResponseBody =
    rt === null
      ? { trial: descriptor.trial, choice: "timeout" }
      : { trial: descriptor.trial, choice: "press", rt_ms: rt };
  const ack = await api.postResponse(body);
  const requeued = ack.requeued === true || ack.accepted === false;
  view.show({
    kind: "passive-feedback",
    wealth: ack.wealth ?? descriptor.wealth,
    message: requeued ? ack.message ?? "press button earlier" : null,
    position: descriptor.position + (requeued ? 0 : 1),
    total: base.total,
  });
  await clock.sleep(pauseMs);
  return requeued;
}

async function runActiveTrial(
  api: Api,
  clock: Clock,
  inputs: Inputs,
  view: View,
  descriptor: ActiveDescriptor,
  pauseMs: number,
): Promise<{ timedOut: boolean; jitter: number }> {
  const base = {
    wealth: descriptor.wealth,
    trial: descriptor.trial,
    total: descriptor.trial + descriptor.remaining,
    left: descriptor.left,
  };
  view.show({ kind: "active-trial", ...base, right: null });
  const leftShownAt = clock.now();
  await clock.sleep(descriptor.jitter_ms);
  view.show({ kind: "active-trial", ...base, right: descriptor.right });
  const jitter = clock.now() - leftShownAt;

  const choice = await inputs.awaitChoice(descriptor.window_ms);
  const body: ResponseBody =
    choice === null
      ? { trial: descriptor.trial, choice: "timeout" }
      : { trial: descriptor.trial, choice: choice.side, rt_ms: choice.rtMs };
  await api.postResponse(body);
  await clock.sleep(pauseMs);
  return { timedOut: choice === null, jitter };
}
