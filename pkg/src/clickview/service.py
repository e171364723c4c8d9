"""HTTP inference service backing the click-to-predict UI.

Endpoints (all JSON unless noted):

* ``GET /healthz`` - liveness, plain ``ok``
* ``GET /api/meta`` - model/dataset description for the UI
* ``GET /api/instances?split=test&page=0&page_size=24`` - paged instance
  listing including ground-truth labels (evaluation-only metadata so the
  UI can draw the truth marker)
* ``GET /api/instances/{id}/image`` - the instance's frame as PNG
* ``POST /api/predict`` - PredictRequest in, PredictResponse out
* anything else - static files from the configured UI directory

The checkpoint and dataset are loaded once and never mutated; requests
carry no shared state, so concurrent identical predicts return identical
bodies. Floats are wire-formatted at 9 significant digits; prediction
always runs on the stored float image, never on PNG-quantized pixels.
"""

from __future__ import annotations

import base64
import io
import json
import re
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from .dataset import Dataset
from .model import load_checkpoint, predict

WIRE_DIGITS = 9


def wire_value(obj):
    """Round every float to 9 significant digits for transport."""
    if isinstance(obj, float):
        return float(f"{obj:.{WIRE_DIGITS}g}")
    if isinstance(obj, np.floating):
        return wire_value(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return wire_value(obj.tolist())
    if isinstance(obj, dict):
        return {k: wire_value(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [wire_value(v) for v in obj]
    return obj


class RequestError(ValueError):
    def __init__(self, status: int, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.status = status
        self.field = field
        self.message = message


class ServiceApp:
    """Request handlers over an immutable loaded model + dataset."""

    def __init__(self, static_dir=None):
        self.params = None
        self.config = None
        self.dataset: Dataset | None = None
        self.static_dir = Path(static_dir) if static_dir else None

    @property
    def ready(self) -> bool:
        return self.params is not None and self.dataset is not None

    def load(self, checkpoint_path, dataset_path) -> None:
        params, config = load_checkpoint(checkpoint_path)
        dataset = Dataset(dataset_path)
        if dataset.config.image_size != config.image_size or dataset.config.n_bins != config.n_bins:
            raise ValueError("checkpoint and dataset disagree on image size or bins")
        self.params = params
        self.config = config
        self.dataset = dataset

    # -- handlers ---------------------------------------------------------

    def meta(self) -> dict:
        cfg = self.config
        return wire_value({
            "variant": cfg.variant,
            "image_size": cfg.image_size,
            "n_bins": cfg.n_bins,
            "map_kind": cfg.map_kind,
            "attention_grid": list(cfg.attention_grid),
            "object_classes": [
                {
                    "id": i,
                    "name": obj,
                    "keypoint_classes": [
                        {"id": cfg.kp_index(obj, name), "name": name}
                        for name in cfg.kp_classes[obj]
                    ],
                }
                for i, obj in enumerate(cfg.object_classes)
            ],
            "splits": {s: len(self.dataset.split(s)) for s in ("train", "val", "test")},
        })

    def instances(self, query: dict) -> dict:
        split = query.get("split", ["test"])[0]
        try:
            page = int(query.get("page", ["0"])[0])
            page_size = int(query.get("page_size", ["24"])[0])
        except ValueError:
            raise RequestError(400, "page", "page and page_size must be integers")
        if page < 0 or not 1 <= page_size <= 200:
            raise RequestError(400, "page", "page >= 0 and 1 <= page_size <= 200 required")
        try:
            records = self.dataset.split(split)
        except Exception:
            raise RequestError(400, "split", f"unknown split {split!r}")
        chunk = records[page * page_size:(page + 1) * page_size]
        return wire_value({
            "total": len(records),
            "page": page,
            "page_size": page_size,
            "items": [
                {
                    "id": r.instance_id,
                    "obj_class": r.obj_class,
                    "kp_class": r.kp_class,
                    "x": r.x,
                    "y": r.y,
                    # ground truth is exposed for the evaluation UI only
                    "label": {"az": r.azimuth_deg, "el": r.elevation_deg, "ti": r.tilt_deg},
                    "bins": list(r.bins(self.config.n_bins)),
                }
                for r in chunk
            ],
        })

    def instance_png(self, instance_id: int) -> bytes:
        try:
            inst = self.dataset.by_id(instance_id)
        except KeyError:
            raise RequestError(404, "instance_id", f"no instance {instance_id}")
        img = self.dataset.instance_image(inst)
        arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr).save(buf, format="PNG")
        return buf.getvalue()

    def predict(self, body: dict) -> dict:
        t0 = time.perf_counter()
        cfg = self.config
        s = cfg.image_size
        has_id = "instance_id" in body
        has_img = "image_b64" in body
        if has_id == has_img:
            raise RequestError(400, "instance_id",
                               "exactly one of instance_id or image_b64 is required")
        if has_id:
            try:
                inst = self.dataset.by_id(int(body["instance_id"]))
            except (KeyError, ValueError, TypeError):
                raise RequestError(404, "instance_id", f"no instance {body.get('instance_id')}")
            image = self.dataset.instance_image(inst)
        else:
            try:
                raw = base64.b64decode(body["image_b64"], validate=True)
                image = np.frombuffer(raw, dtype="<f4").reshape(s, s, 3).astype(np.float64)
            except Exception:
                raise RequestError(400, "image_b64",
                                   f"expected base64 of {s}x{s}x3 little-endian float32")

        obj_class = self._object_class(body.get("obj_class"))
        kp_id = self._kp_class(body.get("kp_class"), obj_class)
        x, y = body.get("x"), body.get("y")
        if not isinstance(x, int) or not isinstance(y, int) or not (0 <= x < s and 0 <= y < s):
            raise RequestError(400, "x", f"x and y must be integers in [0, {s})")

        pred = predict(self.params, cfg, image, x, y, kp_id, obj_class)
        latency_ms = (time.perf_counter() - t0) * 1000.0
        return wire_value({
            "variant": pred.variant,
            "n_bins": cfg.n_bins,
            "probs": {a: list(pred.probs[a]) for a in ("az", "el", "ti")},
            "bins": pred.bins,
            "angles_deg": pred.angles_deg,
            "weight_map": None if pred.weight_map is None else pred.weight_map.tolist(),
            "latency_ms": latency_ms,
        })

    def _object_class(self, value) -> str:
        classes = self.config.object_classes
        if isinstance(value, int) and 0 <= value < len(classes):
            return classes[value]
        if isinstance(value, str) and value in classes:
            return value
        raise RequestError(400, "obj_class", f"expected an id in [0, {len(classes)}) or a name")

    def _kp_class(self, value, obj_class: str) -> int:
        cfg = self.config
        names = cfg.kp_classes[obj_class]
        if isinstance(value, str):
            if value not in names:
                raise RequestError(400, "kp_class", f"{value!r} is not a keypoint of {obj_class}")
            return cfg.kp_index(obj_class, value)
        if isinstance(value, int):
            valid = [cfg.kp_index(obj_class, n) for n in names]
            if value not in valid:
                raise RequestError(400, "kp_class",
                                   f"id {value} does not belong to {obj_class} "
                                   f"(valid: {valid[0]}..{valid[-1]})")
            return value
        raise RequestError(400, "kp_class", "expected a keypoint class id or name")


_INSTANCE_IMAGE = re.compile(r"^/api/instances/(\d+)/image$")

_CONTENT_TYPES = {
    ".html": "text/html", ".js": "text/javascript", ".mjs": "text/javascript",
    ".css": "text/css", ".png": "image/png", ".svg": "image/svg+xml",
    ".json": "application/json", ".map": "application/json", ".ico": "image/x-icon",
}


class _Handler(BaseHTTPRequestHandler):
    server_version = "clickview/0.1"

    @property
    def app(self) -> ServiceApp:
        return self.server.app  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, payload: dict) -> None:
        self._send(status, json.dumps(payload).encode(), "application/json")

    def _error(self, status: int, field: str, message: str) -> None:
        self._send_json(status, {"error": {"field": field, "message": message}})

    def _guard_ready(self) -> bool:
        if not self.app.ready:
            self._error(503, "service", "model is still loading")
            return False
        return True

    def do_GET(self):
        url = urlparse(self.path)
        try:
            if url.path == "/healthz":
                self._send(200, b"ok", "text/plain")
            elif url.path == "/api/meta":
                if self._guard_ready():
                    self._send_json(200, self.app.meta())
            elif url.path == "/api/instances":
                if self._guard_ready():
                    self._send_json(200, self.app.instances(parse_qs(url.query)))
            elif m := _INSTANCE_IMAGE.match(url.path):
                if self._guard_ready():
                    self._send(200, self.app.instance_png(int(m.group(1))), "image/png")
            else:
                self._static(url.path)
        except RequestError as e:
            self._error(e.status, e.field, e.message)

    def do_POST(self):
        url = urlparse(self.path)
        if url.path != "/api/predict":
            self._error(404, "path", f"unknown endpoint {url.path}")
            return
        if not self._guard_ready():
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length) or b"{}")
            if not isinstance(body, dict):
                raise ValueError
        except (ValueError, json.JSONDecodeError):
            self._error(400, "body", "request body must be a JSON object")
            return
        try:
            self._send_json(200, self.app.predict(body))
        except RequestError as e:
            self._error(e.status, e.field, e.message)

    def _static(self, path: str) -> None:
        root = self.app.static_dir
        if root is None:
            self._error(404, "path", f"no handler for {path}")
            return
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            self._error(404, "path", f"no file {rel}")
            return
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), ctype)


class ClickViewServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, app: ServiceApp):
        super().__init__(addr, _Handler)
        self.app = app


def make_server(checkpoint, dataset, host: str = "127.0.0.1", port: int = 0,
                static_dir=None) -> ClickViewServer:
    """Bind a server whose app is already loaded; port 0 picks a free port."""
    app = ServiceApp(static_dir=static_dir)
    server = ClickViewServer((host, port), app)
    app.load(checkpoint, dataset)
    return server


def serve(checkpoint, dataset, host: str = "127.0.0.1", port: int = 8000,
          static_dir=None) -> None:
    server = make_server(checkpoint, dataset, host=host, port=port, static_dir=static_dir)
    print(f"serving on http://{host}:{server.server_address[1]}/ "
          f"(variant {server.app.config.variant})")
    try:
        server.serve_forever()
    finally:
        server.server_close()
