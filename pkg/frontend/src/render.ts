/** Browser renderer: mounts the pure view tree into a real DOM element. */

import { buildView, UiNode, ViewState } from "./view.js";
import { View } from "./session.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export function toElement(node: UiNode, doc: Document): Element {
  const el =
    node.ns === "svg"
      ? doc.createElementNS(SVG_NS, node.tag)
      : doc.createElement(node.tag);
  for (const [key, value] of Object.entries(node.attrs ?? {})) {
    el.setAttribute(key, value);
  }
  if (node.text !== undefined) {
    el.appendChild(doc.createTextNode(node.text));
  }
  for (const child of node.children ?? []) {
    el.appendChild(toElement(child, doc));
  }
  return el;
}

export function domView(root: Element): View {
  const doc = root.ownerDocument;
  return {
    show(state: ViewState): void {
      const tree = buildView(state);
      root.replaceChildren(toElement(tree, doc));
    },
  };
}
