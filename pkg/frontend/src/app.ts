// Console state and DOM wiring. One App instance owns the scene panel,
// the conversation, and the status poller; all server traffic goes
// through the typed client.

import { ApiError, ApiImage, Client, StatusReply } from "./api";
import { drawScene } from "./pixels";
import { routeFor } from "./routing";

export interface ConversationEntry {
  author: "user" | "device";
  text: string;
  timestamp: number;
  intent?: string;
}

export const SCALE = 8;
export const POLL_MS = 2000;

function el<T extends HTMLElement>(root: Document, id: string): T {
  const found = root.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

export class App {
  readonly client: Client;
  readonly entries: ConversationEntry[] = [];
  image: ApiImage | null = null;
  sceneId: number | null = null;
  lastStatus: StatusReply | null = null;
  connected = false;

  private root: Document;
  private queue: Promise<void> = Promise.resolve();
  private pendingCount = 0;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(root: Document, base = "") {
    this.root = root;
    this.client = new Client(base);

    el<HTMLFormElement>(root, "chat-form").addEventListener("submit", ev => {
      ev.preventDefault();
      const input = el<HTMLInputElement>(root, "chat-input");
      const text = input.value.trim();
      if (!text) return;
      input.value = "";
      void this.submitCommand(text);
    });
    el<HTMLButtonElement>(root, "load-btn").addEventListener("click", () => {
      const raw = el<HTMLInputElement>(root, "seed-input").value.trim();
      void this.loadScene(raw === "" ? undefined : Number(raw));
    });
    el<HTMLElement>(root, "modules").addEventListener("click", ev => {
      const btn = ev.target as HTMLElement;
      const name = btn.dataset ? btn.dataset.module : undefined;
      if (name) void this.toggleModule(name);
    });
  }

  // --- scene panel ---

  async loadScene(seed?: number): Promise<void> {
    try {
      const scene = await this.client.randomScene(seed);
      this.image = scene.image;
      this.sceneId = scene.scene_id;
      const canvas = el<HTMLCanvasElement>(this.root, "scene-canvas");
      drawScene(canvas, scene.image, SCALE);
      el(this.root, "scene-id").textContent = `scene #${scene.scene_id}`;
      this.showBanner(null);
    } catch (err) {
      this.showBanner(this.describe(err));
    }
  }

  // --- conversation ---

  submitCommand(text: string): Promise<void> {
    // Serialize: at most one request in flight, entries stay chronological.
    this.pendingCount += 1;
    this.setBusy(true);
    this.queue = this.queue
      .then(() => this.performCommand(text))
      .finally(() => {
        this.pendingCount -= 1;
        if (this.pendingCount === 0) this.setBusy(false);
      });
    return this.queue;
  }

  private async performCommand(text: string): Promise<void> {
    this.append({ author: "user", text, timestamp: Date.now() });
    try {
      if (routeFor(text, this.image !== null) === "vqa" && this.image) {
        const reply = await this.client.vqa(this.image, text);
        this.append({ author: "device", text: reply.answer,
                      timestamp: Date.now(), intent: "VQA" });
      } else {
        const reply = await this.client.command(text,
                                                this.image ?? undefined);
        this.append({ author: "device", text: reply.response,
                      timestamp: Date.now(), intent: reply.intent });
        this.renderMode(reply.mode);
      }
    } catch (err) {
      this.append({ author: "device", text: this.describe(err),
                    timestamp: Date.now(), intent: "Error" });
    }
  }

  private append(entry: ConversationEntry): void {
    this.entries.push(entry);
    const list = el(this.root, "messages");
    const line = this.root.createElement("div");
    line.className = `msg ${entry.author}`;
    if (entry.intent) {
      const tag = this.root.createElement("span");
      tag.className = "tag";
      tag.textContent = entry.intent;
      line.appendChild(tag);
    }
    line.appendChild(this.root.createTextNode(entry.text));
    list.appendChild(line);
    list.scrollTop = list.scrollHeight;
  }

  private setBusy(busy: boolean): void {
    el<HTMLInputElement>(this.root, "chat-input").disabled = busy;
    el<HTMLButtonElement>(this.root, "chat-send").disabled = busy;
  }

  // --- status panel ---

  startPolling(): void {
    void this.refreshStatus();
    this.timer = setInterval(() => void this.refreshStatus(), POLL_MS);
  }

  stopPolling(): void {
    if (this.timer) clearInterval(this.timer);
    this.timer = null;
  }

  async refreshStatus(): Promise<void> {
    try {
      const status = await this.client.getStatus();
      this.connected = true;
      this.lastStatus = status;
      this.renderMode(status.mode);
      this.renderModules(status.modules);
    } catch {
      this.connected = false;
      el(this.root, "mode-badge").textContent = "disconnected";
      el(this.root, "mode-badge").className = "badge disconnected";
    }
  }

  async toggleModule(name: string): Promise<void> {
    const current = this.lastStatus?.modules[name] === "Healthy";
    try {
      await this.client.setModuleHealth(name, !current);
      await this.refreshStatus();
    } catch (err) {
      this.showBanner(this.describe(err));
    }
  }

  private renderMode(mode: string): void {
    const badge = el(this.root, "mode-badge");
    badge.textContent = mode;
    badge.className = `badge ${mode.toLowerCase()}`;
    const warn = el(this.root, "failsafe-banner");
    warn.hidden = mode !== "Failsafe";
  }

  private renderModules(modules: Record<string, string>): void {
    for (const [name, health] of Object.entries(modules)) {
      const btn = this.root.querySelector<HTMLButtonElement>(
        `[data-module="${name}"]`);
      if (!btn) continue;
      btn.textContent = `${name}: ${health}`;
      btn.className = health === "Healthy" ? "mod healthy" : "mod failed";
    }
  }

  // --- errors ---

  private describe(err: unknown): string {
    if (err instanceof ApiError) {
      return `service error (${err.code}): ${err.message}`;
    }
    return `cannot reach the service: ${err}`;
  }

  private showBanner(message: string | null): void {
    const banner = el(this.root, "error-banner");
    banner.hidden = message === null;
    banner.textContent = message ?? "";
  }
}
