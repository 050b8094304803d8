// DOM projection of API payloads. Everything here is a pure function of
// the payload it receives: no fetches, no shared state, and all text
// lands via textContent so track data can never inject markup.

import type { PlanCall, TraceSummary, TrackCard, TurnPayload } from "./types.js";

/** Cards shown per turn before the "show all" expansion. */
export const CARD_PREVIEW = 5;

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function trackCard(track: TrackCard): HTMLElement {
  const box = el("div", "card");
  box.append(
    el("div", "card-title", track.title),
    el("div", "card-artist", track.artist),
    el("div", "card-album", track.album),
    el("div", "card-meta", `${track.tempo} bpm | ${track.key} | ${track.release_date}`),
    el("div", "card-tags", track.attributes.join(", "))
  );
  return box;
}

export function cardList(tracks: TrackCard[]): HTMLElement {
  const wrap = el("div", "cards");
  for (const track of tracks.slice(0, CARD_PREVIEW)) wrap.append(trackCard(track));
  if (tracks.length > CARD_PREVIEW) {
    const rest = tracks.slice(CARD_PREVIEW);
    const button = el("button", "show-all", `Show all ${tracks.length}`);
    button.setAttribute("type", "button");
    button.addEventListener("click", () => {
      for (const track of rest) wrap.insertBefore(trackCard(track), button);
      button.remove();
    });
    wrap.append(button);
  }
  return wrap;
}

export function traceBadges(trace: TraceSummary): HTMLElement[] {
  const badges: HTMLElement[] = [];
  if (trace.retry_count > 0) {
    badges.push(el("span", "badge retries", `retries: ${trace.retry_count}`));
  }
  if (trace.fallback_used) badges.push(el("span", "badge fallback", "fallback"));
  if (trace.safety_net_used) badges.push(el("span", "badge safety-net", "safety net"));
  return badges;
}

function argsView(call: PlanCall): HTMLElement {
  const args = el("div", "tool-args");
  for (const [name, value] of Object.entries(call.tool_args)) {
    const row = el("div", "arg");
    // string arguments (notably sql_query) are shown verbatim
    const rendered = typeof value === "string" ? value : JSON.stringify(value);
    row.append(el("span", "arg-name", name), el("code", "arg-value", rendered));
    args.append(row);
  }
  return args;
}

export function planPanel(turn: TurnPayload): HTMLElement {
  const panel = el("details", "plan-panel");
  const summary = el("summary", "", "Plan");
  for (const badge of traceBadges(turn.trace)) summary.append(" ", badge);
  panel.append(summary, el("p", "rationale", turn.rationale));
  const calls = el("ol", "plan-calls");
  turn.plan.forEach((call, position) => {
    const item = el("li", "plan-call");
    item.append(
      el("span", "stage-badge", position === 0 ? "retrieval" : "rerank"),
      el("code", "tool-name", call.tool_name),
      argsView(call)
    );
    calls.append(item);
  });
  panel.append(calls);
  return panel;
}

export function turnView(turn: TurnPayload): HTMLElement {
  const root = el("article", "turn");
  root.append(
    el("div", "bubble user", turn.query),
    el("div", "bubble assistant", turn.response),
    cardList(turn.recommendations),
    planPanel(turn)
  );
  return root;
}

export function pendingView(query: string): HTMLElement {
  const root = el("article", "turn pending");
  root.append(
    el("div", "bubble user", query),
    el("div", "bubble assistant thinking", "Picking tracks...")
  );
  return root;
}

export function errorBanner(message: string, onRetry: () => void): HTMLElement {
  const banner = el("div", "error-banner");
  const button = el("button", "retry", "Retry");
  button.setAttribute("type", "button");
  button.addEventListener("click", () => {
    banner.remove();
    onRetry();
  });
  banner.append(el("span", "error-message", message), button);
  return banner;
}
