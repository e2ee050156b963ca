/** Clocks, response windows, and key-press capture.
 *
 * Everything time-dependent runs against the `Clock` interface so the
 * session logic is testable with a virtual clock and the scripted
 * end-to-end session can fast-forward through real schedules. The browser
 * clock uses the high-resolution monotonic timer.
 */

export interface Clock {
  /** Monotonic milliseconds. */
  now(): number;
  sleep(ms: number): Promise<void>;
}

export interface KeyEventLike {
  key: string;
  atMs: number;
}

/** A stream of key presses; returns an unsubscribe function. */
export interface KeySource {
  onKey(listener: (event: KeyEventLike) => void): () => void;
}

export interface ChoiceEvent {
  side: "left" | "right";
  rtMs: number;
}

export interface Inputs {
  /** Resolve the press latency in ms, or null if the window elapses. */
  awaitPress(windowMs: number): Promise<number | null>;
  /** Resolve a left/right choice with latency, or null on timeout. */
  awaitChoice(windowMs: number): Promise<ChoiceEvent | null>;
}

export function realClock(): Clock {
  return {
    now: () => performance.now(),
    sleep: (ms) => new Promise((resolve) => setTimeout(resolve, Math.max(0, ms))),
  };
}

/** Virtual clock: `sleep` resolves immediately and advances `now` exactly. */
export function fastClock(startMs = 0): Clock {
  let t = startMs;
  return {
    now: () => t,
    sleep: (ms) => {
      t += Math.max(0, ms);
      return Promise.resolve();
    },
  };
}

export const PRESS_KEYS = [" ", "Space", "ArrowLeft", "ArrowRight"];
export const LEFT_KEYS = ["ArrowLeft", "a", "A"];
export const RIGHT_KEYS = ["ArrowRight", "l", "L"];

/** Build response-window inputs from a key stream and a clock.
 *
 * A window opens when the await call is made; the first qualifying key
 * inside the window resolves it, and the deadline resolves it to null.
 * Keys arriving after the deadline are ignored — a late press is a miss.
 */
export function makeInputs(keys: KeySource, clock: Clock): Inputs {
  function awaitKeys<T>(
    windowMs: number,
    match: (event: KeyEventLike, rtMs: number) => T | null,
  ): Promise<T | null> {
    const opened = clock.now();
    return new Promise<T | null>((resolve) => {
      let settled = false;
      const finish = (value: T | null) => {
        if (!settled) {
          settled = true;
          unsubscribe();
          resolve(value);
        }
      };
      const unsubscribe = keys.onKey((event) => {
        const rt = event.atMs - opened;
        if (rt <= 0 || rt > windowMs) {
          return;
        }
        const hit = match(event, rt);
        if (hit !== null) {
          finish(hit);
        }
      });
      void clock.sleep(windowMs).then(() => finish(null));
    });
  }

  return {
    awaitPress: (windowMs) =>
      awaitKeys(windowMs, (event, rtMs) =>
        PRESS_KEYS.includes(event.key) ? rtMs : null,
      ),
    awaitChoice: (windowMs) =>
      awaitKeys<ChoiceEvent>(windowMs, (event, rtMs) => {
        if (LEFT_KEYS.includes(event.key)) {
          return { side: "left", rtMs };
        }
        if (RIGHT_KEYS.includes(event.key)) {
          return { side: "right", rtMs };
        }
        return null;
      }),
  };
}

/** Key stream from DOM keydown events, stamped with the monotonic clock. */
export function domKeySource(target: EventTarget, clock: Clock): KeySource {
  return {
    onKey(listener) {
      const handler = (raw: Event) => {
        const event = raw as KeyboardEvent;
        listener({ key: event.key, atMs: clock.now() });
      };
      target.addEventListener("keydown", handler);
      return () => target.removeEventListener("keydown", handler);
    },
  };
}
