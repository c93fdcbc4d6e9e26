"""HTTP/JSON facade over the model, the scene generator, and the device
control layer.

The routing core is a pure function (route_request) from method, path, and
raw body bytes to a status code and a JSON-safe dict, so the whole API
surface can be exercised without sockets. A thin ThreadingHTTPServer
handler wraps it for real clients and also serves the static console
bundle when one has been built. Handlers never raise: every failure maps
to one of 400, 404, 409, or 503 with an {error, message} body.

State is one immutable checkpoint plus one mutable DeviceState; only the
command and module endpoints touch the device state, and they serialize
through a single lock.
"""

import json
import math
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlsplit

import numpy as np

from . import device, errors, inference, scenegen
from .checkpoint import Checkpoint, load_checkpoint

MAX_BODY = 8_000_000  # bytes; a 32x32 ApiImage is ~15 KB of JSON

# endpoints that go through the model's vision pathway; these refuse to
# answer in failsafe mode, everything else keeps working
_PERCEPTION_PATHS = ("/api/caption", "/api/vqa", "/api/reason")

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
    ".png": "image/png",
}

_PLACEHOLDER_PAGE = b"""<!doctype html>
<html><head><meta charset="utf-8"><title>newvision</title></head>
<body><h1>newvision service</h1>
<p>The interaction console has not been built. The JSON API is live
under <code>/api/</code>; try <a href="/api/status">/api/status</a>.</p>
</body></html>
"""


@dataclass
class ServiceContext:
    """Everything one server instance owns."""

    ckpt: Checkpoint
    world: device.GridWorld
    state: device.DeviceState = field(default_factory=device.DeviceState)
    static_dir: Optional[Path] = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    demo_image: np.ndarray = None

    def __post_init__(self):
        if self.demo_image is None:
            # fallback subject for /api/command perception intents when the
            # client does not attach a scene of its own
            self.demo_image = scenegen.render_scene(scenegen.generate_scene(0))


def image_to_api(img: np.ndarray) -> dict:
    """Float [0,1] HxWx3 array to the wire format."""
    h, w = img.shape[:2]
    flat = np.round(img * 255.0).astype(np.int64).ravel().tolist()
    return {"width": w, "height": h, "rgb": flat}


def image_from_api(obj) -> np.ndarray:
    """Wire format back to a float32 [0,1] image; raises ConfigError on any
    violated invariant."""
    if not isinstance(obj, dict):
        raise errors.ConfigError("image must be an object")
    try:
        width = int(obj["width"])
        height = int(obj["height"])
        rgb = obj["rgb"]
    except (KeyError, TypeError, ValueError):
        raise errors.ConfigError("image needs integer width/height and rgb")
    if isinstance(rgb, (str, bytes)) or not hasattr(rgb, "__len__"):
        raise errors.ConfigError("rgb must be an array of integers")
    if width < 1 or height < 1 or len(rgb) != width * height * 3:
        raise errors.ConfigError("rgb length must equal width*height*3")
    try:
        arr = np.asarray(rgb, dtype=np.float64)
    except (TypeError, ValueError):
        raise errors.ConfigError("rgb must be an array of integers")
    if arr.ndim != 1 or not np.all((arr >= 0) & (arr <= 255)):
        raise errors.ConfigError("rgb values must lie in 0..255")
    return (arr.reshape(height, width, 3) / 255.0).astype(np.float32)


class _Perception:
    """Adapter giving the device dispatcher eyes: the attached image if the
    client sent one, otherwise the server's demo scene."""

    def __init__(self, ctx: ServiceContext, image: Optional[np.ndarray]):
        self.ctx = ctx
        self.image = ctx.demo_image if image is None else image

    def describe_scene(self) -> str:
        return inference.caption_image(self.image, self.ctx.ckpt)

    identify_object = describe_scene

    def verify_statement(self, text):
        return inference.verify_statement(self.image, text, self.ctx.ckpt)


def _error(status: int, code: str, message: str):
    return status, {"error": code, "message": message}


def _parse_body(body: Optional[bytes]) -> dict:
    if body is None or body == b"":
        raise errors.ConfigError("request body must be a JSON object")
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise errors.ConfigError("request body is not valid JSON")
    if not isinstance(obj, dict):
        raise errors.ConfigError("request body must be a JSON object")
    return obj


def _scene_random(query: dict):
    raw = query.get("seed", ["0"])[0]
    try:
        seed = int(raw)
    except ValueError:
        return _error(400, "bad_seed", f"seed {raw!r} is not an integer")
    if seed < 0:
        return _error(400, "bad_seed", "seed must be non-negative")
    scene = scenegen.generate_scene(seed)
    image = scenegen.render_scene(scene)
    return 200, {"scene_id": seed, "image": image_to_api(image),
                 "spec": scene.to_dict()}


def _caption(ctx, payload):
    image = image_from_api(payload.get("image"))
    return 200, {"caption": inference.caption_image(image, ctx.ckpt)}


def _vqa(ctx, payload):
    question = payload.get("question")
    if not isinstance(question, str):
        raise errors.ConfigError("question must be a string")
    image = image_from_api(payload.get("image"))
    return 200, {"answer": inference.answer_question(image, question,
                                                     ctx.ckpt)}


def _reason(ctx, payload):
    statement = payload.get("statement")
    if not isinstance(statement, str):
        raise errors.ConfigError("statement must be a string")
    image = image_from_api(payload.get("image"))
    truth, conf = inference.verify_statement(image, statement, ctx.ckpt)
    return 200, {"truth": bool(truth), "confidence": float(conf)}


def _command(ctx, payload):
    text = payload.get("text")
    if not isinstance(text, str):
        raise errors.ConfigError("text must be a string")
    image = None
    if payload.get("image") is not None:
        image = image_from_api(payload["image"])
    intent = device.parse_command(text)
    backend = _Perception(ctx, image)
    with ctx.lock:
        response, state = device.dispatch(intent, ctx.state, ctx.world,
                                          backend)
        return 200, {"intent": intent.kind, "response": response,
                     "mode": state.mode}


def _range(payload):
    echo = payload.get("echo_time_us")
    if isinstance(echo, bool) or not isinstance(echo, (int, float)):
        raise errors.ConfigError("echo_time_us must be a number")
    if not math.isfinite(echo):
        # json.loads lets NaN/Infinity literals through; keep them out of
        # the arithmetic so responses stay strict JSON
        raise errors.ConfigError("echo_time_us must be finite")
    distance = device.estimate_distance(float(echo))
    alert, _ = device.obstacle_alert(distance)
    return 200, {"distance_m": distance, "alert": alert}


def _module_health(ctx, name, payload):
    if name not in device.MODULES:
        return _error(404, "not_found", f"no module named {name!r}")
    healthy = payload.get("healthy")
    if not isinstance(healthy, bool):
        raise errors.ConfigError("healthy must be a boolean")
    with ctx.lock:
        device.set_module_health(
            ctx.state, name,
            device.HEALTHY if healthy else device.FAILED)
        return 200, {"mode": ctx.state.mode}


def route_request(ctx: ServiceContext, method: str, path: str,
                  body: Optional[bytes] = None):
    """Dispatch one API request; returns (status, JSON-safe dict)."""
    parts = urlsplit(path)
    route = parts.path.rstrip("/") or "/"
    query = parse_qs(parts.query)
    try:
        if method == "GET":
            if route == "/api/status":
                with ctx.lock:
                    return 200, {"mode": ctx.state.mode,
                                 "modules": dict(ctx.state.health),
                                 "checkpoint_step": ctx.ckpt.step}
            if route == "/api/scene/random":
                return _scene_random(query)
            return _error(404, "not_found", f"no route {method} {route}")

        if method != "POST":
            return _error(404, "not_found", f"no route {method} {route}")

        if route in _PERCEPTION_PATHS:
            with ctx.lock:
                failsafe = ctx.state.mode == device.FAILSAFE
            if failsafe:
                return _error(503, "failsafe",
                              "device is in failsafe mode")
            payload = _parse_body(body)
            if route == "/api/caption":
                return _caption(ctx, payload)
            if route == "/api/vqa":
                return _vqa(ctx, payload)
            return _reason(ctx, payload)
        if route == "/api/command":
            return _command(ctx, _parse_body(body))
        if route == "/api/range":
            return _range(_parse_body(body))
        if route.startswith("/api/module/") and route.endswith("/health"):
            name = route[len("/api/module/"):-len("/health")]
            if "/" not in name:
                return _module_health(ctx, name, _parse_body(body))
        return _error(404, "not_found", f"no route {method} {route}")
    except errors.MissingHead as exc:
        return _error(409, "missing_head", str(exc))
    except errors.NewvisionError as exc:
        return _error(400, type(exc).__name__, str(exc))
    except Exception as exc:  # totality: nothing escapes as a 500
        return _error(400, "bad_request", f"{type(exc).__name__}: {exc}")


# --- HTTP wrapper ----------------------------------------------------------


def _static_response(ctx: ServiceContext, route: str):
    """Resolve a non-API GET against the console bundle."""
    if ctx.static_dir is None or not ctx.static_dir.is_dir():
        if route in ("/", "/index.html"):
            return 200, "text/html; charset=utf-8", _PLACEHOLDER_PAGE
        return None
    name = route.lstrip("/") or "index.html"
    base = ctx.static_dir.resolve()
    target = (base / name).resolve()
    if not target.is_relative_to(base) or not target.is_file():
        return None
    ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
    return 200, ctype, target.read_bytes()


class _Handler(BaseHTTPRequestHandler):
    server_version = "newvision/0.1"

    def _ctx(self) -> ServiceContext:
        return self.server.ctx

    def _send_json(self, status: int, payload: dict):
        blob = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def _read_body(self) -> Optional[bytes]:
        try:
            length = int(self.headers.get("Content-Length", 0))
        except ValueError:
            return None
        if length < 0 or length > MAX_BODY:
            return None
        return self.rfile.read(length)

    def do_GET(self):
        route = urlsplit(self.path).path
        if route.startswith("/api/"):
            status, payload = route_request(self._ctx(), "GET", self.path)
            self._send_json(status, payload)
            return
        hit = _static_response(self._ctx(), route)
        if hit is None:
            self._send_json(404, {"error": "not_found",
                                  "message": f"no file at {route}"})
            return
        status, ctype, blob = hit
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def do_POST(self):
        body = self._read_body()
        if body is None:
            self._send_json(400, {"error": "bad_request",
                                  "message": "unreadable request body"})
            return
        status, payload = route_request(self._ctx(), "POST", self.path, body)
        self._send_json(status, payload)

    def log_message(self, fmt, *args):
        pass  # tests and the CLI drive this server; stay quiet


def default_static_dir() -> Optional[Path]:
    """Console bundle location for a source checkout; None when absent."""
    root = Path(__file__).resolve().parents[2]
    dist = root / "frontend" / "dist"
    return dist if dist.is_dir() else None


def create_server(ckpt_path, world_path=None, port: int = 0,
                  static_dir=None) -> ThreadingHTTPServer:
    """Build a ready-to-serve HTTP server; port 0 picks a free one."""
    ckpt = load_checkpoint(ckpt_path)
    world = (device.load_world(world_path) if world_path
             else device.default_world())
    if static_dir is None:
        static_dir = default_static_dir()
    ctx = ServiceContext(ckpt=ckpt, world=world,
                         static_dir=Path(static_dir) if static_dir else None)
    server = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
    server.ctx = ctx
    return server
