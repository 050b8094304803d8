// Application shell: profile form, transcript, composer. The transcript
// is always rendered from a fresh GET /sessions/{id} snapshot, so what
// is on screen is a pure projection of server state and a page reload
// (session id lives in the URL hash) reproduces it exactly.

import { ApiClient, ApiError } from "./api.js";
import { errorBanner, pendingView, turnView } from "./render.js";
import type { ProfilePayload, SessionSnapshot, UserType } from "./types.js";

export interface AppOptions {
  apiBase: string;
}

const HASH_PREFIX = "#s=";

export function sessionIdFromHash(hash: string): string | null {
  return hash.startsWith(HASH_PREFIX) ? hash.slice(HASH_PREFIX.length) : null;
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class App {
  private readonly client: ApiClient;
  private sessionId: string | null = null;
  private pending = false;

  private readonly banners: HTMLElement;
  private readonly setup: HTMLFormElement;
  private readonly chat: HTMLElement;
  private readonly sessionLabel: HTMLElement;
  private readonly transcript: HTMLElement;
  private readonly composer: HTMLFormElement;
  private readonly queryInput: HTMLInputElement;
  private readonly sendButton: HTMLButtonElement;

  constructor(private readonly root: HTMLElement, options: AppOptions) {
    this.client = new ApiClient(options.apiBase);
    root.classList.add("app");

    this.banners = el("div", "banner-slot");
    this.setup = this.buildSetupForm();
    this.chat = el("main", "chat");
    this.chat.hidden = true;

    const header = el("header", "session-line", "session ");
    this.sessionLabel = el("code", "session-id");
    header.append(this.sessionLabel);
    this.transcript = el("div", "transcript");

    this.composer = document.createElement("form");
    this.composer.className = "composer";
    this.queryInput = document.createElement("input");
    this.queryInput.className = "query";
    this.queryInput.placeholder = "Ask for music...";
    this.sendButton = document.createElement("button");
    this.sendButton.className = "send";
    this.sendButton.textContent = "Send";
    this.sendButton.disabled = true;
    this.composer.append(this.queryInput, this.sendButton);

    this.chat.append(header, this.transcript, this.composer);
    root.append(this.banners, this.setup, this.chat);

    this.queryInput.addEventListener("input", () => this.refreshComposer());
    this.composer.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.sendTurn();
    });

    const restored = sessionIdFromHash(window.location.hash);
    if (restored) void this.restore(restored);
  }

  private buildSetupForm(): HTMLFormElement {
    const form = document.createElement("form");
    form.className = "profile-form";

    const typeLabel = el("label", "", "user type ");
    const typeSelect = document.createElement("select");
    typeSelect.name = "user_type";
    for (const value of ["cold_start", "known"]) {
      const option = document.createElement("option");
      option.value = value;
      option.textContent = value;
      typeSelect.append(option);
    }
    typeLabel.append(typeSelect);

    const idLabel = el("label", "", "user id ");
    const idInput = document.createElement("input");
    idInput.name = "user_id";
    idInput.disabled = true; // cold_start is the default
    idLabel.append(idInput);

    const countryLabel = el("label", "", "country ");
    const countryInput = document.createElement("input");
    countryInput.name = "country";
    countryLabel.append(countryInput);

    const kLabel = el("label", "", "tracks per turn ");
    const kInput = document.createElement("input");
    kInput.name = "final_k";
    kInput.type = "number";
    kInput.value = "20";
    kInput.min = "1";
    kLabel.append(kInput);

    const start = document.createElement("button");
    start.className = "start";
    start.textContent = "Start session";

    typeSelect.addEventListener("change", () => {
      idInput.disabled = typeSelect.value === "cold_start";
      if (idInput.disabled) idInput.value = "";
    });
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.startSession();
    });

    form.append(typeLabel, idLabel, countryLabel, kLabel, start);
    return form;
  }

  private readProfile(): { profile: ProfilePayload; finalK?: number } {
    const data = new FormData(this.setup);
    const userType = (data.get("user_type") as UserType) ?? "cold_start";
    const profile: ProfilePayload = { user_type: userType };
    const userId = String(data.get("user_id") ?? "").trim();
    if (userType === "known" && userId) profile.user_id = userId;
    const country = String(data.get("country") ?? "").trim();
    if (country) profile.country = country;
    const finalK = Number(data.get("final_k"));
    return { profile, finalK: Number.isInteger(finalK) && finalK > 0 ? finalK : undefined };
  }

  private showBanner(message: string, onRetry: () => void): void {
    this.banners.replaceChildren(errorBanner(message, onRetry));
  }

  private refreshComposer(): void {
    this.sendButton.disabled = this.pending || this.queryInput.value.trim() === "";
  }

  private async startSession(): Promise<void> {
    const { profile, finalK } = this.readProfile();
    try {
      const created = await this.client.createSession(profile, finalK);
      this.banners.replaceChildren();
      window.location.hash = HASH_PREFIX + created.session_id;
      await this.attach(created.session_id);
    } catch (err) {
      this.showBanner(describe(err), () => void this.startSession());
    }
  }

  private async restore(sessionId: string): Promise<void> {
    try {
      await this.attach(sessionId);
      this.banners.replaceChildren();
    } catch (err) {
      this.showBanner(describe(err), () => void this.restore(sessionId));
    }
  }

  private async attach(sessionId: string): Promise<void> {
    const snapshot = await this.client.getSession(sessionId);
    this.sessionId = sessionId;
    this.sessionLabel.textContent = sessionId;
    this.setup.hidden = true;
    this.chat.hidden = false;
    this.renderTranscript(snapshot);
    this.refreshComposer();
  }

  private renderTranscript(snapshot: SessionSnapshot): void {
    this.transcript.replaceChildren(...snapshot.turns.map(turnView));
  }

  private async sendTurn(): Promise<void> {
    const query = this.queryInput.value.trim();
    if (this.pending || !this.sessionId || query === "") return;
    this.pending = true;
    this.refreshComposer();
    const pending = pendingView(query);
    this.transcript.append(pending);
    try {
      await this.client.sendMessage(this.sessionId, query);
      const snapshot = await this.client.getSession(this.sessionId);
      this.queryInput.value = "";
      this.banners.replaceChildren();
      this.renderTranscript(snapshot);
    } catch (err) {
      pending.remove();
      this.showBanner(describe(err), () => {
        this.queryInput.value = query;
        void this.sendTurn();
      });
    } finally {
      this.pending = false;
      this.refreshComposer();
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.kind}: ${err.message}`;
  return String(err);
}

export function initApp(root: HTMLElement, options: AppOptions): App {
  return new App(root, options);
}
