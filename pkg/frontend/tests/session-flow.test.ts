// End-to-end flow against the real service spawned by the global setup:
// drives a scripted eight-turn session through the UI, checks the rendered
// cards against the API's own payloads, and reproduces the transcript in a
// second app instance the way a page reload would.

import { describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { initApp } from "../src/app.js";
import { API_BASE } from "./config.js";

const QUERIES = [
  "something mellow and dreamy",
  "play popular stuff",
  "more like that please",
  "tracks under 150 bpm please",
  "something breezy and jazzy",
  "play recent releases",
  "songs from 2010",
  "feeling moody and ambient tonight",
];

function waitUntil(check: () => void): Promise<void> {
  return vi.waitFor(check, { timeout: 20000, interval: 100 });
}

function submit(form: HTMLFormElement): void {
  form.dispatchEvent(new Event("submit", { bubbles: true, cancelable: true }));
}

function cardTitles(turnNode: Element): string[] {
  const button = turnNode.querySelector<HTMLButtonElement>(".show-all");
  button?.click();
  return Array.from(turnNode.querySelectorAll(".card-title")).map(
    (node) => node.textContent ?? ""
  );
}

describe("scripted session against the live service", () => {
  it("renders every turn from the API payload and reproduces it on reload", async () => {
    window.location.hash = "";
    document.body.innerHTML = '<div id="app"></div>';
    const root = document.getElementById("app") as HTMLElement;
    initApp(root, { apiBase: API_BASE });

    // cold-start profile straight from the form defaults
    submit(root.querySelector(".profile-form") as HTMLFormElement);
    await waitUntil(() => {
      expect((root.querySelector(".chat") as HTMLElement).hidden).toBe(false);
    });
    const sessionId = window.location.hash.slice("#s=".length);
    expect(sessionId).not.toBe("");

    const queryInput = root.querySelector(".query") as HTMLInputElement;
    const composer = root.querySelector(".composer") as HTMLFormElement;
    for (const [index, query] of QUERIES.entries()) {
      queryInput.value = query;
      queryInput.dispatchEvent(new Event("input", { bubbles: true }));
      submit(composer);
      await waitUntil(() => {
        expect(root.querySelector(".turn.pending")).toBeNull();
        expect(root.querySelectorAll(".transcript .turn")).toHaveLength(index + 1);
      });
    }

    const transcript = root.querySelector(".transcript") as HTMLElement;
    const firstRender = transcript.innerHTML;

    // the server is the source of truth for what should be on screen
    const snapshot = await new ApiClient(API_BASE).getSession(sessionId);
    expect(snapshot.turns).toHaveLength(QUERIES.length);
    expect(snapshot.turns.map((t) => t.query)).toEqual(QUERIES);
    expect(snapshot.profile.user_id).toBeNull();

    // a fresh app instance booted from the same URL rebuilds the transcript
    document.body.insertAdjacentHTML("beforeend", '<div id="again"></div>');
    const again = document.getElementById("again") as HTMLElement;
    initApp(again, { apiBase: API_BASE });
    await waitUntil(() => {
      expect(again.querySelectorAll(".transcript .turn")).toHaveLength(QUERIES.length);
    });
    expect((again.querySelector(".transcript") as HTMLElement).innerHTML).toBe(firstRender);

    // every rendered card title matches the API payload, turn by turn
    const turnNodes = Array.from(root.querySelectorAll(".transcript .turn"));
    expect(turnNodes).toHaveLength(QUERIES.length);
    turnNodes.forEach((turnNode, index) => {
      const payload = snapshot.turns[index];
      expect(payload).toBeDefined();
      const expected = payload!.recommendations.map((track) => track.title);
      expect(expected.length).toBeGreaterThan(0);
      expect(cardTitles(turnNode)).toEqual(expected);
      expect(turnNode.querySelector(".bubble.user")?.textContent).toBe(QUERIES[index]);
      expect(turnNode.querySelector(".bubble.assistant")?.textContent).toBe(
        payload!.response
      );
    });
  }, 120000);
});
