// Typed client for the device service JSON API. Every helper throws
// ApiError on a non-2xx reply so callers can surface the message.

export interface ApiImage {
  width: number;
  height: number;
  rgb: number[];
}

export interface StatusReply {
  mode: string;
  modules: Record<string, string>;
  checkpoint_step: number;
}

export interface SceneReply {
  scene_id: number;
  image: ApiImage;
  spec: unknown;
}

export interface CommandReply {
  intent: string;
  response: string;
  mode: string;
}

export class ApiError extends Error {
  status: number;
  code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

async function request<T>(base: string, method: string, path: string,
                          body?: unknown): Promise<T> {
  const opts: RequestInit = { method };
  if (body !== undefined) {
    opts.headers = { "Content-Type": "application/json" };
    opts.body = JSON.stringify(body);
  }
  const res = await fetch(base + path, opts);
  const data = await res.json().catch(() => ({}));
  if (!res.ok) {
    throw new ApiError(res.status, data.error ?? "unknown",
                       data.message ?? `HTTP ${res.status}`);
  }
  return data as T;
}

export class Client {
  constructor(readonly base: string = "") {}

  getStatus(): Promise<StatusReply> {
    return request(this.base, "GET", "/api/status");
  }

  randomScene(seed?: number): Promise<SceneReply> {
    const q = seed === undefined ? "" : `?seed=${seed}`;
    return request(this.base, "GET", `/api/scene/random${q}`);
  }

  caption(image: ApiImage): Promise<{ caption: string }> {
    return request(this.base, "POST", "/api/caption", { image });
  }

  vqa(image: ApiImage, question: string): Promise<{ answer: string }> {
    return request(this.base, "POST", "/api/vqa", { image, question });
  }

  reason(image: ApiImage, statement: string):
      Promise<{ truth: boolean; confidence: number }> {
    return request(this.base, "POST", "/api/reason", { image, statement });
  }

  command(text: string, image?: ApiImage): Promise<CommandReply> {
    const body: Record<string, unknown> = { text };
    if (image) body.image = image;
    return request(this.base, "POST", "/api/command", body);
  }

  range(echoTimeUs: number): Promise<{ distance_m: number; alert: boolean }> {
    return request(this.base, "POST", "/api/range",
                   { echo_time_us: echoTimeUs });
  }

  setModuleHealth(name: string, healthy: boolean): Promise<{ mode: string }> {
    return request(this.base, "POST", `/api/module/${name}/health`,
                   { healthy });
  }
}
