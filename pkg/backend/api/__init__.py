"""Flask blueprints: scenario validation and runs, radial solutions."""
