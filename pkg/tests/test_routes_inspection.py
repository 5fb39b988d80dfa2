import numpy as np
import pytest
from fastapi.testclient import TestClient

from src.cobra.checkpoint import save_checkpoint
from src.cobra.model import CobraModel
from src.main import app
import routes


@pytest.fixture
def client():
    routes.service.model = None
    routes.service.checkpoint = None
    return TestClient(app)


@pytest.fixture
def loaded(client, config_file, run_config, tmp_path):
    path = save_checkpoint(CobraModel(run_config.model), tmp_path / "served.ckpt")
    routes.service.load(config_file, str(path))
    yield run_config
    routes.service.model = None


def test_status_without_model(client):
    response = client.get("/status")
    assert response.status_code == 200
    assert response.json()["loaded"] is False


def test_decode_without_model_is_404(client):
    response = client.post("/decode", json={"audio": [[0.0] * 5] * 4})
    assert response.status_code == 404


def test_cost_endpoint(client):
    response = client.get("/cost", params={"f_m": 100, "f_b": 16, "scheme": "bottleneck"})
    assert response.status_code == 200
    body = response.json()
    assert body["formula_pairs"] == 2 * 116**2
    assert body["measured_madds"] == body["formula_pairs"] * body["d_model"]


def test_cost_rejects_unknown_scheme(client):
    response = client.get("/cost", params={"f_m": 10, "f_b": 2, "scheme": "sparse"})
    assert response.status_code == 400


def test_status_and_decode_with_model(client, loaded):
    status = client.get("/status").json()
    assert status["loaded"] is True
    assert status["variant"] == "bottleneck"
    assert status["label"] == loaded.model.run_label
    assert status["model"]["d_model"] == loaded.model.d_model

    rng = np.random.default_rng(0)
    payload = {
        "audio": rng.normal(size=(8, loaded.model.audio_in_dim)).tolist(),
        "video": rng.normal(size=(4, loaded.model.video_in_dim)).tolist(),
        "beam": 2,
    }
    response = client.post("/decode", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert len(body["tokens"]) <= loaded.eval.max_len
    assert body["finished"] is True


def test_decode_rejects_wrong_feature_width(client, loaded):
    payload = {"audio": [[0.0] * 3] * 4, "video": [[0.0] * loaded.model.video_in_dim] * 2}
    assert client.post("/decode", json=payload).status_code == 400


def test_decode_needs_video_for_fusion_model(client, loaded):
    payload = {"audio": [[0.1 * i] * loaded.model.audio_in_dim for i in range(4)]}
    assert client.post("/decode", json=payload).status_code == 400
