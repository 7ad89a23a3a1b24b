"""Tests for src.api module."""

import json
from unittest.mock import patch

import pytest
from fastapi import HTTPException
from fastapi.testclient import TestClient

from src.api import _report_cache, app, load_report


@pytest.fixture
def client():
    """Create test client."""
    return TestClient(app)


@pytest.fixture
def reports_dir(tmp_path):
    """Point the server at a temporary reports directory with one report in it."""
    (tmp_path / "described").mkdir()
    (tmp_path / "described" / "baseline.json").write_text(json.dumps({"metadata": {"mode": "described"}}))
    (tmp_path / "notes.txt").write_text("not a report")
    _report_cache.clear()
    with patch("src.api.REPORTS_DIR", tmp_path):
        yield tmp_path
    _report_cache.clear()


class TestRootEndpoint:
    """Tests for the endpoint listing."""

    def test_lists_endpoints(self, client):
        """Test that every route is listed."""
        response = client.get("/")
        assert response.status_code == 200
        endpoints = response.json()["endpoints"]
        assert "/oracle/table1" in endpoints
        assert "/risk/solve-tabular" in endpoints


class TestOracleEndpoints:
    """Tests for /oracle endpoints."""

    def test_table1(self, client):
        """Test the 20 agent x case rows."""
        rows = client.get("/oracle/table1").json()["rows"]
        assert len(rows) == 20
        assert {"agent": "expected-utility", "case": "a", "choice": "right"} in rows

    def test_ellsberg_multiple_priors(self, client):
        """Test that point masses over every composition keep the known urn."""
        priors = [[float(i == j) for i in range(11)] for j in range(11)]
        response = client.post("/oracle/ellsberg", json={"priors": priors})
        assert response.status_code == 200
        assert response.json() == {"before": "left", "after": "left", "consistent": True}

    def test_ellsberg_invalid_prior(self, client):
        """Test that an unnormalized prior is a 400."""
        response = client.post("/oracle/ellsberg", json={"priors": [[0.5] * 11]})
        assert response.status_code == 400

    def test_ellsberg_empty(self, client):
        """Test that an empty prior list fails validation."""
        response = client.post("/oracle/ellsberg", json={"priors": []})
        assert response.status_code == 422


class TestEvalEndpoints:
    """Tests for /eval endpoints."""

    def test_baseline(self, client):
        """Test the risky baseline map."""
        data = client.get("/eval/baseline").json()
        assert data["colors"] == ["white", "green", "red"]
        cells = {tuple(c["config"].values()): c["rate"] for c in data["cells"]}
        assert cells[(0, 10, 0)] == 1.0
        assert cells[(0, 5, 5)] == 0.5

    def test_novel_mean_std(self, client):
        """Test the novel triangle's mean map with a yellow reward."""
        data = client.get("/eval/mean-std", params={"triangle": "novel", "yellow": 1.0}).json()
        assert data["mean"]["colors"] == ["green", "red", "yellow"]
        cells = {tuple(c["config"].values()): c["value"] for c in data["mean"]["cells"]}
        assert cells[(0, 0, 10)] == pytest.approx(1.0)

    def test_unknown_triangle(self, client):
        """Test that an unknown triangle is a 400."""
        response = client.get("/eval/baseline", params={"triangle": "square"})
        assert response.status_code == 400
        assert "triangle" in response.json()["detail"]


class TestSolveTabularEndpoint:
    """Tests for /risk/solve-tabular."""

    def test_self_loop(self, client):
        """Test that a rewarding self-loop is worth r / (1 - gamma)."""
        body = {"transitions": [[[1.0]]], "rewards": [[1.0]], "discount": 0.5, "beta": 0.0}
        data = client.post("/risk/solve-tabular", json=body).json()
        assert data["values"][0] == pytest.approx(2.0, abs=1e-6)
        assert data["policy"] == [0]

    def test_unnormalized_rows(self, client):
        """Test that bad transitions are a 400."""
        body = {"transitions": [[[0.5]]], "rewards": [[1.0]]}
        response = client.post("/risk/solve-tabular", json=body)
        assert response.status_code == 400
        assert "normalized" in response.json()["detail"]


class TestReportEndpoints:
    """Tests for /reports endpoints."""

    def test_list(self, client, reports_dir):
        """Test that only JSON files are listed, relative to the directory."""
        assert client.get("/reports").json() == {"reports": ["described/baseline.json"]}

    def test_get(self, client, reports_dir):
        """Test reading one report."""
        response = client.get("/reports/described/baseline.json")
        assert response.status_code == 200
        assert response.json()["metadata"]["mode"] == "described"

    def test_missing(self, client, reports_dir):
        """Test that a missing report is a 404."""
        assert client.get("/reports/absent.json").status_code == 404

    def test_not_json(self, client, reports_dir):
        """Test that non-JSON files are refused."""
        assert client.get("/reports/notes.txt").status_code == 400

    def test_missing_directory(self, client, tmp_path):
        """Test that a missing reports directory lists nothing."""
        with patch("src.api.REPORTS_DIR", tmp_path / "absent"):
            assert client.get("/reports").json() == {"reports": []}


class TestLoadReport:
    """Tests for load_report function."""

    def test_cached(self, reports_dir):
        """Test that a report is served from cache after its file changes."""
        first = load_report("described/baseline.json")
        (reports_dir / "described" / "baseline.json").write_text(json.dumps({"metadata": {"mode": "changed"}}))
        assert load_report("described/baseline.json") == first

    def test_outside_directory(self, reports_dir):
        """Test that paths escaping the reports directory are refused."""
        with pytest.raises(HTTPException) as exc_info:
            load_report("../outside.json")
        assert exc_info.value.status_code == 400
