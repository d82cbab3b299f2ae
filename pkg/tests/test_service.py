import base64

import numpy as np
import pytest
import torch

from faceedit import pngio
from faceedit.checkpoint import CheckpointError
from faceedit.fixtures import make_fixture_image
from faceedit.losses import RandomFeaturePyramid
from faceedit.service import DimensionMismatch, create_app, edit, load_model
from faceedit.trainer import evaluate, validation_records


@pytest.fixture(scope="module")
def model(toy_run):
    return load_model(toy_run["final"])


@pytest.fixture()
def client(model):
    from fastapi.testclient import TestClient
    return TestClient(create_app(model))


def fixture_request(mask=None, seed=7):
    image, _ = make_fixture_image(64, 12)
    image8 = pngio.float_to_image(image)
    if mask is None:
        mask = np.zeros((64, 64), np.uint8)
        mask[18:40, 20:44] = 1
    return image8, mask, {
        "image": base64.b64encode(pngio.encode_image_uint8(image8)).decode(),
        "mask": base64.b64encode(pngio.encode_binary(mask)).decode(),
        "seed": seed,
    }


class TestLoadModel:
    def test_load_gives_frozen_eval_handle(self, model, toy_run):
        assert model.step == toy_run["config"].steps
        assert not model.generator.training
        assert all(not p.requires_grad for p in model.generator.parameters())

    def test_two_handles_identical_outputs(self, toy_run):
        a = load_model(toy_run["final"])
        b = load_model(toy_run["final"])
        image, _ = make_fixture_image(64, 3)
        image8 = pngio.float_to_image(image)
        mask = np.ones((64, 64), np.uint8)
        out_a, _ = edit(a, image8, mask, seed=1)
        out_b, _ = edit(b, image8, mask, seed=1)
        assert np.array_equal(out_a, out_b)

    def test_corrupt_magic_is_typed_error(self, toy_run, tmp_path):
        bad = tmp_path / "corrupt.fegan"
        payload = bytearray(toy_run["final"].read_bytes())
        payload[:4] = b"JUNK"
        bad.write_bytes(bytes(payload))
        with pytest.raises(CheckpointError):
            load_model(bad)

    def test_load_matches_trainer_metrics(self, toy_run, prepared_examples):
        # The served generator is the trained generator: same weights, same
        # evaluation metrics as the training-side checkpoint loader.
        from faceedit.trainer import load_training_checkpoint
        cfg = toy_run["config"]
        records = validation_records(prepared_examples, cfg)
        extractor = RandomFeaturePyramid(seed=0)
        train_side, _, _, _ = load_training_checkpoint(toy_run["final"])
        serve_side = load_model(toy_run["final"])
        a = evaluate(train_side, records, cfg.weights, extractor)
        b = evaluate(serve_side.generator, records, cfg.weights, extractor)
        assert a == b


class TestEditFunction:
    def test_zero_mask_identity(self, model):
        image8, _, _ = fixture_request()
        out, _ = edit(model, image8, np.zeros((64, 64), np.uint8))
        assert np.array_equal(out, image8)

    def test_never_modifies_outside_mask(self, model, rng):
        image8, mask, _ = fixture_request()
        for seed in range(3):
            out, _ = edit(model, image8, mask, seed=seed)
            assert np.array_equal(out[mask == 0], image8[mask == 0])
            assert not np.array_equal(out[mask == 1], image8[mask == 1])

    def test_seeded_requests_identical(self, model):
        image8, mask, _ = fixture_request()
        a, _ = edit(model, image8, mask, seed=123)
        b, _ = edit(model, image8, mask, seed=123)
        assert np.array_equal(a, b)

    def test_arbitrary_size_padded_and_cropped(self, model):
        image8, _, _ = fixture_request()
        odd = image8[:53, :41]
        mask = np.ones((53, 41), np.uint8)
        out, _ = edit(model, odd, mask)
        assert out.shape == (53, 41, 3)

    def test_sketch_and_color_influence_output(self, model):
        image8, mask, _ = fixture_request()
        plain, _ = edit(model, image8, mask, seed=5)
        sketch = np.zeros((64, 64), np.uint8)
        sketch[24:34, 28:38] = 1
        sketched, _ = edit(model, image8, mask, sketch=sketch, seed=5)
        assert not np.array_equal(plain, sketched)

    def test_dimension_mismatch_raises(self, model):
        image8, _, _ = fixture_request()
        with pytest.raises(DimensionMismatch):
            edit(model, image8, np.zeros((32, 32), np.uint8))
        with pytest.raises(DimensionMismatch):
            edit(model, image8, np.zeros((64, 64), np.uint8),
                 sketch=np.zeros((16, 16), np.uint8))


class TestHttpApi:
    def test_health_and_meta(self, client, model):
        health = client.get("/health").json()
        assert health["status"] == "ok"
        assert health["model_step"] == model.step
        meta = client.get("/meta").json()
        assert meta["size_divisor"] == model.divisor
        assert meta["trained_size"] == 64

    def test_edit_round_trip_and_mask_exactness(self, client):
        image8, mask, payload = fixture_request()
        response = client.post("/edit", json=payload)
        assert response.status_code == 200
        body = response.json()
        assert body["width"] == 64 and body["height"] == 64
        assert body["elapsed_ms"] > 0
        composite = pngio.decode_image_uint8(base64.b64decode(body["composite"]))
        assert np.array_equal(composite[mask == 0], image8[mask == 0])

    def test_zero_mask_response_pixel_identical(self, client):
        image8, _, payload = fixture_request(mask=np.zeros((64, 64), np.uint8))
        body = client.post("/edit", json=payload).json()
        composite = pngio.decode_image_uint8(base64.b64decode(body["composite"]))
        assert np.array_equal(composite, image8)

    def test_same_seed_identical_responses(self, client):
        _, _, payload = fixture_request(seed=55)
        first = client.post("/edit", json=payload).json()["composite"]
        second = client.post("/edit", json=payload).json()["composite"]
        assert first == second

    def test_dimension_mismatch_is_422(self, client):
        _, _, payload = fixture_request()
        payload["mask"] = base64.b64encode(
            pngio.encode_binary(np.zeros((16, 16), np.uint8))).decode()
        assert client.post("/edit", json=payload).status_code == 422

    def test_garbage_payload_is_422(self, client):
        _, _, payload = fixture_request()
        payload["image"] = "definitely-not-base64!!"
        assert client.post("/edit", json=payload).status_code == 422

    def test_missing_model_is_503(self):
        from fastapi.testclient import TestClient
        bare = TestClient(create_app(None))
        _, _, payload = fixture_request()
        assert bare.post("/edit", json=payload).status_code == 503
        assert bare.get("/health").status_code == 503

    def test_color_layer_accepted(self, client):
        image8, mask, payload = fixture_request()
        color = np.zeros((64, 64, 3), np.float32)
        support = np.zeros((64, 64), np.uint8)
        support[20:30, 20:30] = 1
        color[20:30, 20:30] = [0.9, -0.5, -0.5]
        payload["color"] = base64.b64encode(
            pngio.encode_color_strokes(color, support)).decode()
        response = client.post("/edit", json=payload)
        assert response.status_code == 200


@pytest.mark.slow
def test_frontend_client_against_live_service(toy_run, tmp_path):
    """The compiled TypeScript client round-trips an edit against a real
    uvicorn instance of this service."""
    import json
    import shutil
    import socket
    import subprocess
    import threading
    import time

    node = shutil.which("node")
    dist = __import__("pathlib").Path(__file__).resolve().parents[1] / "frontend" / "dist"
    if not node or not (dist / "client.js").exists():
        pytest.skip("node or the built frontend bundle is unavailable")

    import uvicorn

    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    app = create_app(load_model(toy_run["final"]))
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port,
                                           log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 15
    while not server.started:
        if time.time() > deadline:
            pytest.fail("service did not start")
        time.sleep(0.05)

    try:
        image, _ = make_fixture_image(64, 21)
        image8 = pngio.float_to_image(image)
        image_path = tmp_path / "input.png"
        out_path = tmp_path / "composite.json"
        pngio.save_image(image_path, image)

        script = f"""
import {{ encodeEditRequest, postEdit, fetchMeta }} from "{(dist / 'client.js').as_posix()}";
import {{ decodePng }} from "{(dist / 'png.js').as_posix()}";
import {{ createLayerStack }} from "{(dist / 'layers.js').as_posix()}";
import {{ readFileSync, writeFileSync }} from "node:fs";

const base = "http://127.0.0.1:{port}";
const png = await decodePng(new Uint8Array(readFileSync("{image_path.as_posix()}")));
const stack = createLayerStack(png.width, png.height, png.data);
for (let y = 20; y < 40; y++)
  for (let x = 20; x < 44; x++) stack.mask[y * png.width + x] = 1;
const meta = await fetchMeta((u, i) => fetch(u, i), base);
const body = await encodeEditRequest(stack, 9);
const composite = await postEdit((u, i) => fetch(u, i), body, base);
writeFileSync("{out_path.as_posix()}", JSON.stringify({{
  width: composite.width, height: composite.height,
  rgb: Array.from(composite.rgb), trainedSize: meta.trained_size,
}}));
"""
        script_path = tmp_path / "roundtrip.mjs"
        script_path.write_text(script)
        result = subprocess.run([node, str(script_path)], capture_output=True,
                                text=True, timeout=120)
        assert result.returncode == 0, result.stderr

        payload = json.loads(out_path.read_text())
        assert payload["trainedSize"] == 64
        composite = np.array(payload["rgb"], dtype=np.uint8).reshape(64, 64, 3)
        mask = np.zeros((64, 64), bool)
        mask[20:40, 20:44] = True
        assert np.array_equal(composite[~mask], image8[~mask])
        assert not np.array_equal(composite[mask], image8[mask])
    finally:
        server.should_exit = True
        thread.join(timeout=10)


def test_pngio_color_strokes_round_trip(rng):
    rgb = rng.uniform(-1, 1, (16, 16, 3)).astype(np.float32)
    support = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    rgb = rgb * support[..., None]
    data = pngio.encode_color_strokes(rgb, support)
    back_rgb, back_support = pngio.decode_color_strokes(data)
    assert np.array_equal(back_support, support)
    assert np.abs(back_rgb - rgb).max() <= 1.0 / 127.5  # 8-bit quantization
