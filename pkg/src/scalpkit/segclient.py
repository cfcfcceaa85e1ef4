"""Boundary to external point-prompt segmenters.

The wire protocol is one JSON request/response: the request carries a
base64 PNG image plus positive/negative (row, col) prompts, the response a
base64 PNG mask and a model name. Backends can live behind HTTP POST
/segment, behind a subprocess exchanging request/response files, or be the
in-process deterministic mock used for testing, which answers with the
ground-truth components selected by the prompts.
"""
from __future__ import annotations

import base64
import json
import subprocess
import tempfile
import time
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

import numpy as np
import requests
from PIL import Image

from . import raster
from ._util import encode_image
from .prompter import PromptSet

ENDPOINT_ENV = "SCALPKIT_SEGMENT_URL"


class Transport(RuntimeError):
    """Transient transport failure; safe to retry."""


class BadResponse(RuntimeError):
    """Backend replied with something structurally unusable."""


class BackendError(RuntimeError):
    """Backend reported a failure of its own."""


def binarize(scores: np.ndarray, threshold: float = 0.5, strict: bool = True) -> raster.Mask:
    """Threshold a [0,1] score map; ties go to hair (>= comparison)."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.size == 0:
        raise ValueError(f"score map must be non-empty 2-D, got shape {scores.shape}")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    if strict and ((scores < 0) | (scores > 1)).any():
        raise ValueError("score map values outside [0, 1]")
    return scores >= threshold


@dataclass(frozen=True)
class PromptRequest:
    image: np.ndarray  # (H,W,3) uint8
    prompts: PromptSet


@dataclass(frozen=True)
class PromptResponse:
    mask: raster.Mask
    model: str
    latency_ms: float = 0.0


def _png_b64(arr: np.ndarray) -> str:
    return base64.b64encode(encode_image(arr)).decode("ascii")


def _from_png_b64(data: str) -> np.ndarray:
    with Image.open(BytesIO(base64.b64decode(data))) as img:
        return np.asarray(img)


def request_to_payload(req: PromptRequest) -> dict:
    return {
        "image_png_b64": _png_b64(req.image),
        "positives": [{"row": r, "col": c} for r, c in req.prompts.positives],
        "negatives": [{"row": r, "col": c} for r, c in req.prompts.negatives],
    }


def request_from_payload(doc: dict) -> PromptRequest:
    image = _from_png_b64(doc["image_png_b64"])
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=-1)
    prompts = PromptSet(
        tuple((float(p["row"]), float(p["col"])) for p in doc.get("positives", [])),
        tuple((int(p["row"]), int(p["col"])) for p in doc.get("negatives", [])),
    )
    return PromptRequest(image, prompts)


def response_to_payload(resp: PromptResponse) -> dict:
    return {"mask_png_b64": _png_b64(resp.mask.astype(np.uint8) * 255), "model": resp.model}


def response_from_payload(doc: dict) -> PromptResponse:
    if "error" in doc:
        raise BackendError(str(doc["error"]))
    if "mask_png_b64" not in doc:
        raise BadResponse("response lacks mask_png_b64")
    mask = _from_png_b64(doc["mask_png_b64"])
    if mask.ndim != 2:
        raise BadResponse(f"mask must be single-channel, got shape {mask.shape}")
    return PromptResponse(mask > 0, str(doc.get("model", "unknown")))


class MockBackend:
    """Deterministic stand-in: replies with the union of ground-truth
    components containing a positive prompt, excluding any component that
    contains a negative prompt (negatives dominate)."""

    model = "mock-components/1"

    def __init__(self, ground_truth: raster.Mask, connectivity: int = 8):
        self.ground_truth = raster.as_mask(ground_truth)
        self.labeling = raster.label_components(self.ground_truth, connectivity)

    def _label_at(self, row: float, col: float) -> int:
        h, w = self.ground_truth.shape
        r = min(max(int(round(row)), 0), h - 1)
        c = min(max(int(round(col)), 0), w - 1)
        return int(self.labeling.labels[r, c])

    def segment(self, req: PromptRequest) -> PromptResponse:
        if req.image.shape[:2] != self.ground_truth.shape:
            raise BackendError(
                f"mock holds {self.ground_truth.shape} ground truth, image is {req.image.shape[:2]}"
            )
        wanted = {self._label_at(r, c) for r, c in req.prompts.positives} - {0}
        banned = {self._label_at(r, c) for r, c in req.prompts.negatives} - {0}
        keep = wanted - banned
        mask = np.isin(self.labeling.labels, sorted(keep)) if keep else np.zeros_like(self.ground_truth)
        return PromptResponse(mask, self.model)


class HttpBackend:
    """POST /segment client; raises Transport on connection-level failures."""

    def __init__(self, url: str, timeout_ms: int = 30000, session: requests.Session | None = None):
        self.url = url
        self.timeout_s = timeout_ms / 1000.0
        self.session = session or requests.Session()

    def segment(self, req: PromptRequest) -> PromptResponse:
        try:
            http_resp = self.session.post(self.url, json=request_to_payload(req), timeout=self.timeout_s)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise Transport(f"POST {self.url}: {exc}") from exc
        if http_resp.status_code >= 500:
            raise Transport(f"POST {self.url}: HTTP {http_resp.status_code}")
        if http_resp.status_code != 200:
            raise BackendError(f"POST {self.url}: HTTP {http_resp.status_code}: {http_resp.text[:200]}")
        try:
            doc = http_resp.json()
        except ValueError as exc:
            raise BadResponse(f"non-JSON reply from {self.url}") from exc
        resp = response_from_payload(doc)
        return resp


class FileExchangeBackend:
    """Runs `command --in request.json --out response.json` per request."""

    def __init__(self, command: list[str]):
        if not command:
            raise ValueError("empty command")
        self.command = list(command)

    def segment(self, req: PromptRequest) -> PromptResponse:
        with tempfile.TemporaryDirectory(prefix="segreq-") as tmp:
            req_path = Path(tmp) / "request.json"
            resp_path = Path(tmp) / "response.json"
            req_path.write_text(json.dumps(request_to_payload(req)))
            argv = self.command + ["--in", str(req_path), "--out", str(resp_path)]
            proc = subprocess.run(argv, capture_output=True, text=True)
            if proc.returncode != 0:
                raise BackendError(f"{argv[0]} exited {proc.returncode}: {proc.stderr[:200]}")
            if not resp_path.exists():
                raise BadResponse(f"{argv[0]} wrote no response file")
            return response_from_payload(json.loads(resp_path.read_text()))


def request_mask(backend, req: PromptRequest, attempts: int = 3, backoff_s: float = 0.1) -> PromptResponse:
    """Call a backend, retrying transient transport failures with exponential
    backoff; validates that the reply mask matches the request image size."""
    started = time.monotonic()
    last: Transport | None = None
    for attempt in range(attempts):
        if attempt:
            time.sleep(backoff_s * 2 ** (attempt - 1))
        try:
            resp = backend.segment(req)
            break
        except Transport as exc:
            last = exc
    else:
        raise Transport(f"{attempts} attempts failed; last: {last}")
    if resp.mask.shape != req.image.shape[:2]:
        raise BadResponse(f"mask shape {resp.mask.shape} does not match image {req.image.shape[:2]}")
    elapsed_ms = (time.monotonic() - started) * 1000.0
    return PromptResponse(raster.as_mask(resp.mask), resp.model, elapsed_ms)


def resolve_backend(spec: str, timeout_ms: int = 30000):
    """Backend from a URI-ish spec: http(s)://..., mock:MASK_FILE, or cmd:SHELL_WORDS."""
    if spec.startswith(("http://", "https://")):
        return HttpBackend(spec, timeout_ms=timeout_ms)
    if spec.startswith("mock:"):
        return MockBackend(raster.read_mask(spec[len("mock:") :]))
    if spec.startswith("cmd:"):
        import shlex

        return FileExchangeBackend(shlex.split(spec[len("cmd:") :]))
    raise ValueError(f"unknown backend spec {spec!r} (want http(s)://, mock:, or cmd:)")
