/** Pure view layer: session states become a renderer-agnostic node tree.
 *
 * The tree is plain data so tests and the scripted end-to-end session can
 * audit exactly what a subject would see — in particular that gamble panes
 * never contain numeric outcome values; gambles appear only as abstract
 * shapes keyed by stimulus id. `render.ts` mounts the same tree into the
 * real DOM.
 */

export interface UiNode {
  tag: string;
  ns?: "svg";
  attrs?: Record<string, string>;
  text?: string;
  children?: UiNode[];
}

export type ViewState =
  | {
      kind: "passive-cue";
      wealth: number;
      stimulus: number;
      position: number;
      total: number;
      cued: boolean;
    }
  | {
      kind: "passive-feedback";
      wealth: number;
      message: string | null;
      position: number;
      total: number;
    }
  | {
      kind: "active-trial";
      wealth: number;
      trial: number;
      total: number;
      left: number[];
      right: number[] | null; // null until the jitter elapses
    }
  | {
      kind: "done";
      wealth: number;
      payoutAmount: number | null;
      activeRecorded: number;
    };

/** Nine visually distinct abstract shapes; stimulus ids map onto them. */
const SHAPE_BUILDERS: Array<(fill: string) => UiNode> = [
  (f) => svgShape("circle", { cx: "50", cy: "50", r: "36", fill: f }),
  (f) => svgShape("rect", { x: "18", y: "18", width: "64", height: "64", rx: "6", fill: f }),
  (f) => svgShape("polygon", { points: "50,12 88,82 12,82", fill: f }),
  (f) => svgShape("polygon", { points: "50,10 90,50 50,90 10,50", fill: f }),
  (f) => svgShape("polygon", { points: "50,8 88,38 73,86 27,86 12,38", fill: f }),
  (f) => svgShape("polygon", { points: "30,14 70,14 90,50 70,86 30,86 10,50", fill: f }),
  (f) =>
    svgShape("polygon", {
      points: "50,6 60,38 94,38 66,58 76,90 50,70 24,90 34,58 6,38 40,38",
      fill: f,
    }),
  (f) =>
    svgShape("path", {
      d: "M38 12 h24 v26 h26 v24 h-26 v26 h-24 v-26 h-26 v-24 h26 z",
      fill: f,
    }),
  (f) =>
    svgShape("circle", {
      cx: "50",
      cy: "50",
      r: "30",
      fill: "none",
      stroke: f,
      "stroke-width": "16",
    }),
];

const SHAPE_FILLS = [
  "#e4572e",
  "#17bebb",
  "#ffc914",
  "#76b041",
  "#b37bd4",
  "#f2798f",
  "#5386e4",
  "#d9a679",
  "#8fe48a",
];

function svgShape(tag: string, attrs: Record<string, string>): UiNode {
  return {
    tag: "svg",
    ns: "svg",
    attrs: { viewBox: "0 0 100 100", width: "100%", height: "100%" },
    children: [{ tag, ns: "svg", attrs }],
  };
}

export function stimulusShape(stimulusId: number): UiNode {
  const index = ((stimulusId - 1) % 9 + 9) % 9;
  return SHAPE_BUILDERS[index](SHAPE_FILLS[index]);
}

function wealthBar(wealth: number): UiNode {
  return {
    tag: "div",
    attrs: { class: "wealth-bar" },
    children: [
      { tag: "span", text: "Wealth " },
      { tag: "span", attrs: { class: "amount" }, text: `${Math.round(wealth)} DKK` },
    ],
  };
}

function progress(text: string): UiNode {
  return { tag: "div", attrs: { class: "progress" }, text };
}

function gamblePane(ids: number[] | null, side: "left" | "right"): UiNode {
  if (ids === null) {
    return { tag: "div", attrs: { class: "gamble placeholder", "data-side": side } };
  }
  const children: UiNode[] = [];
  ids.forEach((id, i) => {
    if (i > 0) {
      children.push({ tag: "div", attrs: { class: "divider" } });
    }
    children.push({
      tag: "div",
      attrs: { class: "slot", "data-stimulus": String(id) },
      children: [stimulusShape(id)],
    });
  });
  return { tag: "div", attrs: { class: "gamble", "data-side": side }, children };
}

export function buildView(state: ViewState): UiNode {
  switch (state.kind) {
    case "passive-cue":
      return {
        tag: "div",
        attrs: { class: "screen", "data-screen": "passive" },
        children: [
          wealthBar(state.wealth),
          {
            tag: "div",
            attrs: { class: state.cued ? "stimulus-box cued" : "stimulus-box" },
            children: [stimulusShape(state.stimulus)],
          },
          {
            tag: "div",
            attrs: { class: "hint" },
            text: state.cued ? "Press now" : "Watch the symbol",
          },
          progress(`${state.position + 1} / ${state.total}`),
        ],
      };
    case "passive-feedback":
      return {
        tag: "div",
        attrs: { class: "screen", "data-screen": "passive-feedback" },
        children: [
          wealthBar(state.wealth),
          {
            tag: "div",
            attrs: { class: "message" },
            text: state.message ?? "",
          },
          progress(`${state.position} / ${state.total}`),
        ],
      };
    case "active-trial":
      return {
        tag: "div",
        attrs: { class: "screen", "data-screen": "active" },
        children: [
          wealthBar(state.wealth),
          {
            tag: "div",
            attrs: { class: "gambles" },
            children: [gamblePane(state.left, "left"), gamblePane(state.right, "right")],
          },
          {
            tag: "div",
            attrs: { class: "hint" },
            text:
              state.right === null
                ? "A second option is coming"
                : "Choose: left or right arrow. Outcomes stay hidden.",
          },
          progress(`${state.trial + 1} / ${state.total}`),
        ],
      };
    case "done":
      return {
        tag: "div",
        attrs: { class: "screen", "data-screen": "done" },
        children: [
          {
            tag: "div",
            attrs: { class: "done-card" },
            children: [
              { tag: "div", text: "Session complete" },
              wealthBar(state.wealth),
              {
                tag: "div",
                attrs: { class: "payout" },
                text:
                  state.payoutAmount === null
                    ? "Payout pending"
                    : `Payout ${Math.round(state.payoutAmount)} DKK`,
              },
              progress(`${state.activeRecorded} choices recorded`),
            ],
          },
        ],
      };
  }
}

/** All text content of a subtree, concatenated — the audit surface. */
export function collectText(node: UiNode): string {
  const parts: string[] = [];
  const walk = (n: UiNode) => {
    if (n.text) {
      parts.push(n.text);
    }
    (n.children ?? []).forEach(walk);
  };
  walk(node);
  return parts.join(" ");
}

/** Find descendant nodes by their class attribute token. */
export function findByClass(node: UiNode, token: string): UiNode[] {
  const hits: UiNode[] = [];
  const walk = (n: UiNode) => {
    const cls = n.attrs?.class ?? "";
    if (cls.split(/\s+/).includes(token)) {
      hits.push(n);
    }
    (n.children ?? []).forEach(walk);
  };
  walk(node);
  return hits;
}
