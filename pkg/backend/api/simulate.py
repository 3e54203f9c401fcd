"""
Simulation API
Validates scenario documents and runs small scenarios in-process
"""

import logging

from flask import Blueprint, request, jsonify

from utils.errors import ConfigError, DropletError
from utils.minmove import run
from utils.scenario import scenario_from_dict, validate_document
from utils.verify import verify_trace

logger = logging.getLogger(__name__)

simulate_bp = Blueprint('simulate', __name__)

DEFAULT_MAX_CELLS = 20000


@simulate_bp.route('/validate', methods=['POST'])
def validate():
    """
    Validate a scenario document without running it.

    Request JSON: a scenario document (version 1)

    Response JSON:
    {
        "valid": false,
        "issues": ["params.mu_minus: must lie in (0, 1), got 1.5"]
    }
    """
    try:
        data = request.get_json(silent=True)
        if data is None:
            return jsonify({"error": "Request body must be JSON"}), 400
        issues = validate_document(data)
        return jsonify({"valid": not issues, "issues": issues})

    except Exception as e:
        logger.exception("validate failed")
        return jsonify({"error": str(e)}), 500


@simulate_bp.route('/run', methods=['POST'])
def run_document():
    """
    Run a scenario and check its certificates; nothing is written to disk.

    Request JSON: a scenario document, plus an optional "max_cells" guard
    on the number of free cells (default 20000).

    Response JSON:
    {
        "name": "tiny",
        "trace": [{"t": 0.0, "F": 1.0, "area": ..., "D": ..., "J": ..., ...}],
        "certificates": [{"name": "stability", "pass": true, ...}],
        "jumps": [],
        "pass": true
    }
    """
    try:
        data = request.get_json(silent=True)
        if not isinstance(data, dict):
            return jsonify({"error": "Request body must be a JSON object"}), 400
        data = dict(data)
        max_cells = data.pop('max_cells', DEFAULT_MAX_CELLS)
        if isinstance(max_cells, bool) or not isinstance(max_cells, int) or max_cells <= 0:
            return jsonify({"error": "max_cells must be a positive integer"}), 400

        scenario = scenario_from_dict(data)
        free = int(scenario.domain.free.sum())
        if free > max_cells:
            return jsonify({"error": f"domain has {free} free cells, limit is {max_cells}"}), 400

        trace = run(scenario.schedule, scenario.initial, scenario.domain, scenario.params)
        results, jumps = verify_trace(trace, scenario.certificates, scenario.settings)
        return jsonify({
            "name": scenario.name,
            "trace": trace.frame().to_dict(orient='records'),
            "certificates": [c.to_json() for c in results.values()],
            "jumps": [j.to_dict() for j in jumps],
            "pass": all(c.passed for c in results.values()),
        })

    except ConfigError as e:
        return jsonify({"error": str(e), "issues": e.issues}), 400
    except DropletError as e:
        return jsonify({"error": str(e)}), 422
    except Exception as e:
        logger.exception("run failed")
        return jsonify({"error": str(e)}), 500
