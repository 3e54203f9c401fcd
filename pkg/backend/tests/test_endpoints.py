"""
Endpoint integration tests for the simulation and radial APIs.
"""

import math

import pytest

from tests.test_scenario import TINY


class TestHealth:

    def test_health(self, client):
        resp = client.get('/api/health')
        assert resp.status_code == 200
        assert resp.get_json() == {"status": "healthy"}

    def test_unknown_route(self, client):
        resp = client.get('/api/nope')
        assert resp.status_code == 404
        assert resp.get_json()["error"] == "Not found"


# ============================================================
# Radial endpoints
# ============================================================

class TestZetaEndpoint:
    """Tests for POST /api/radial/zeta"""

    def test_list(self, client):
        resp = client.post('/api/radial/zeta', json={"s": [1.0, math.e]})
        assert resp.status_code == 200
        values = resp.get_json()["zeta"]
        assert values[0] == pytest.approx(1.7632228343518967, rel=1e-10)
        assert values[1] == pytest.approx(math.e, rel=1e-10)

    def test_scalar(self, client):
        resp = client.post('/api/radial/zeta', json={"s": 2 * math.log(2)})
        assert resp.get_json()["zeta"] == pytest.approx(2.0)

    @pytest.mark.parametrize("body", [{}, {"s": []}, {"s": [1.0, -2.0]}, {"s": "one"}, {"s": True}])
    def test_rejects_bad_input(self, client, body):
        resp = client.post('/api/radial/zeta', json=body)
        assert resp.status_code == 400
        assert "error" in resp.get_json()


class TestProfileEndpoint:
    """Tests for POST /api/radial/profile"""

    def test_values(self, client):
        resp = client.post('/api/radial/profile', json={"lambda": 1.0, "F": math.e, "r": [1.0, 2.0, 3.0]})
        data = resp.get_json()
        assert data["R"] == pytest.approx(math.e)
        assert data["u"][0] == pytest.approx(math.e)
        assert data["u"][1] == pytest.approx(math.e * (1 - math.log(2)))
        assert data["u"][2] == pytest.approx(0.0, abs=1e-12)

    def test_radius_inside_obstacle(self, client):
        resp = client.post('/api/radial/profile', json={"lambda": 1.0, "F": 1.0, "r": [0.5]})
        assert resp.status_code == 400


class TestEvolveEndpoint:
    """Tests for POST /api/radial/evolve"""

    BODY = {"knots": [[0, 1.0], [1, 2.0], [2, 1.0]], "delta": 0.1,
            "R0": 1.7632228343518967, "mu_plus": 0.2, "mu_minus": 0.2}

    def test_loop(self, client):
        resp = client.post('/api/radial/evolve', json=self.BODY)
        assert resp.status_code == 200
        data = resp.get_json()
        assert len(data["states"]) == 21
        first = data["states"][0]
        assert set(first) == {"t", "F", "R", "lambda", "regime", "J"}
        assert first["regime"] == "pinned"
        assert data["sigma"] == pytest.approx(math.sqrt(1.5))
        assert len(data["band"]["advancing"]) == 21
        assert all(a < b for a, b in zip(data["band"]["advancing"], data["band"]["receding"]))

    def test_missing_fields(self, client):
        body = dict(self.BODY)
        del body["delta"], body["R0"]
        resp = client.post('/api/radial/evolve', json=body)
        assert resp.status_code == 400
        assert "delta" in resp.get_json()["error"] and "R0" in resp.get_json()["error"]

    def test_bad_params(self, client):
        resp = client.post('/api/radial/evolve', json={**self.BODY, "mu_minus": 1.5})
        assert resp.status_code == 400
        assert any("mu_minus" in issue for issue in resp.get_json()["issues"])

    def test_start_outside_band(self, client):
        resp = client.post('/api/radial/evolve', json={**self.BODY, "R0": 5.0})
        assert resp.status_code == 400


class TestHalflineEndpoint:
    """Tests for POST /api/radial/halfline"""

    def test_optimum(self, client):
        resp = client.post('/api/radial/halfline', json={"F": 1.0, "Q": 1.21})
        data = resp.get_json()
        assert data["R"] == pytest.approx(1 / 1.1)
        assert data["energy"] == pytest.approx(2.2)

    def test_rejects_zero(self, client):
        assert client.post('/api/radial/halfline', json={"F": 0, "Q": 1.0}).status_code == 400


# ============================================================
# Simulation endpoints
# ============================================================

class TestValidateEndpoint:
    """Tests for POST /api/simulate/validate"""

    def test_valid(self, client):
        resp = client.post('/api/simulate/validate', json=TINY)
        assert resp.get_json() == {"valid": True, "issues": []}

    def test_issues(self, client):
        doc = {**TINY, "params": {"mu_plus": 0.2, "mu_minus": 1.5}}
        data = client.post('/api/simulate/validate', json=doc).get_json()
        assert data["valid"] is False
        assert any(issue.startswith("params.mu_minus") for issue in data["issues"])

    def test_not_json(self, client):
        resp = client.post('/api/simulate/validate', data="nope", content_type='text/plain')
        assert resp.status_code == 400


class TestRunEndpoint:
    """Tests for POST /api/simulate/run"""

    def test_tiny_run(self, client):
        resp = client.post('/api/simulate/run', json={**TINY, "max_cells": 400})
        assert resp.status_code == 200
        data = resp.get_json()
        assert data["name"] == "tiny"
        assert len(data["trace"]) == 11
        assert {"t", "F", "area", "D", "J", "P"} <= set(data["trace"][0])
        assert data["pass"] is True
        assert {c["name"] for c in data["certificates"]} == {
            "stability", "dissipation_inequality", "energy_balance", "gronwall",
            "dynamic_slope", "regularity", "jumps"}

    def test_cell_limit(self, client):
        resp = client.post('/api/simulate/run', json={**TINY, "max_cells": 100})
        assert resp.status_code == 400
        assert "limit is 100" in resp.get_json()["error"]

    def test_bad_cell_limit(self, client):
        resp = client.post('/api/simulate/run', json={**TINY, "max_cells": "many"})
        assert resp.status_code == 400

    def test_invalid_scenario(self, client):
        resp = client.post('/api/simulate/run', json={**TINY, "colour": "blue"})
        assert resp.status_code == 400
        assert any("colour" in issue for issue in resp.get_json()["issues"])

    def test_domain_too_small(self, client):
        doc = {**TINY, "domain": {"dim": 1, "shape": [30], "h": 0.01, "obstacle": {"halfline": True}},
               "initial": {"kind": "radial", "R0": 0.195}}
        resp = client.post('/api/simulate/run', json=doc)
        assert resp.status_code == 422
        assert "outer boundary" in resp.get_json()["error"]
