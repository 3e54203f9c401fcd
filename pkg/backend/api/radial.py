"""
Radial Solutions API
Closed-form droplets around the unit disk and on the half-line
"""

import math

import numpy as np
from flask import Blueprint, request, jsonify

from utils.errors import ConfigError
from utils.geometry import HysteresisParams
from utils.minmove import Schedule
from utils.radial import (
    evolve_frame, gamma_minus, gamma_plus, halfline_energy, halfline_optimum, radial_energy,
    radial_evolve, radial_profile, sigma, zeta_many,
)

radial_bp = Blueprint('radial', __name__)


def _positive(value) -> bool:
    return (not isinstance(value, bool) and isinstance(value, (int, float))
            and math.isfinite(value) and value > 0)


@radial_bp.route('/zeta', methods=['POST'])
def zeta_values():
    """
    Solve R ln R = s for R > 1.

    Request JSON:
    {
        "s": [1.0, 2.718281828]
    }

    Response JSON:
    {
        "zeta": [1.7632228343, 2.718281828]
    }
    """
    try:
        data = request.get_json(silent=True) or {}
        s = data.get('s')
        if s is None:
            return jsonify({"error": "s is required"}), 400
        scalar = not isinstance(s, list)
        values = [s] if scalar else s
        if not values or not all(_positive(v) for v in values):
            return jsonify({"error": "s must be a positive number or a list of them"}), 400
        roots = zeta_many(values).tolist()
        return jsonify({"zeta": roots[0] if scalar else roots})

    except Exception as e:
        return jsonify({"error": str(e)}), 500


@radial_bp.route('/profile', methods=['POST'])
def profile():
    """
    Radial profile with boundary slope lambda and forcing F.

    Request JSON:
    {
        "lambda": 1.0,
        "F": 2.718281828,
        "r": [1.0, 2.0, 3.0]
    }

    Response JSON:
    {
        "R": 2.718281828,
        "u": [2.718281828, 0.8341, 0.0]
    }
    """
    try:
        data = request.get_json(silent=True) or {}
        lam, F = data.get('lambda'), data.get('F')
        r = data.get('r', [])
        if not _positive(lam) or not _positive(F):
            return jsonify({"error": "lambda and F must be positive numbers"}), 400
        if not isinstance(r, list) or not all(_positive(v) and v >= 1.0 for v in r):
            return jsonify({"error": "r must be a list of radii >= 1"}), 400
        R, u = radial_profile(lam, F)
        return jsonify({"R": R, "u": np.atleast_1d(u(r)).tolist() if r else []})

    except Exception as e:
        return jsonify({"error": str(e)}), 500


@radial_bp.route('/evolve', methods=['POST'])
def evolve():
    """
    Exact radial evolution along a piecewise-linear forcing.

    Request JSON:
    {
        "knots": [[0, 1.0], [1, 2.0], [2, 1.0]],
        "delta": 0.01,
        "R0": 1.7632,
        "mu_plus": 0.2,
        "mu_minus": 0.2
    }

    Response JSON:
    {
        "states": [{"t": 0.0, "F": 1.0, "R": 1.7632, "lambda": 1.0, "regime": "pinned",
                    "J": 13.14}, ...],
        "sigma": 1.2247,
        "band": {"advancing": [...], "receding": [...]}
    }
    """
    try:
        data = request.get_json(silent=True) or {}
        required = ('knots', 'delta', 'R0', 'mu_plus', 'mu_minus')
        missing = [k for k in required if data.get(k) is None]
        if missing:
            return jsonify({"error": f"Missing fields: {', '.join(missing)}"}), 400

        params = HysteresisParams(data['mu_plus'], data['mu_minus'])
        schedule = Schedule.from_knots(data['knots'], data['delta'])
        states = radial_evolve(schedule, data['R0'], params)
        frame = evolve_frame(schedule.times, states)
        frame['J'] = [radial_energy(s)[2] for s in states]
        return jsonify({
            "states": frame.to_dict(orient='records'),
            "sigma": sigma(params),
            "band": {
                "advancing": [gamma_plus(F, params) for F in schedule.forcing],
                "receding": [gamma_minus(F, params) for F in schedule.forcing],
            },
        })

    except ConfigError as e:
        return jsonify({"error": str(e), "issues": e.issues}), 400
    except (TypeError, ValueError) as e:
        return jsonify({"error": str(e)}), 400
    except Exception as e:
        return jsonify({"error": str(e)}), 500


@radial_bp.route('/halfline', methods=['POST'])
def halfline():
    """
    Minimizer of F²/R + QR on the half-line.

    Request JSON:
    {
        "F": 1.0,
        "Q": 1.21
    }

    Response JSON:
    {
        "R": 0.9090909,
        "energy": 2.2
    }
    """
    try:
        data = request.get_json(silent=True) or {}
        F, Q = data.get('F'), data.get('Q')
        if not _positive(F) or not _positive(Q):
            return jsonify({"error": "F and Q must be positive numbers"}), 400
        return jsonify({"R": halfline_optimum(F, Q), "energy": halfline_energy(F, Q)})

    except Exception as e:
        return jsonify({"error": str(e)}), 500
