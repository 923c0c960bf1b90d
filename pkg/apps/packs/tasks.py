import logging

from celery import shared_task

logger = logging.getLogger(__name__)


@shared_task(bind=True, max_retries=2)
def solve_pack_cell(self, params_data, grid_data, n, beta, t_max=200.0, newton_tol=None):
    """Solve one (N, beta) optimizer cell on a worker; returns a JSON-ready candidate"""
    try:
        from apps.core.params import ModelParams
        from apps.grids.services import Grid

        from .services import candidate_to_dict, solve_cell

        params = ModelParams.from_dict(params_data)
        grid = Grid.from_dict(grid_data)
        candidate = solve_cell(params, grid, n, beta, t_max, newton_tol)
        logger.info(f"cell N={n}, beta={beta:g} done (converged={candidate.converged})")
        return candidate_to_dict(candidate)

    except Exception as exc:
        logger.error(f"Error solving cell N={n}, beta={beta}: {exc}")
        raise self.retry(exc=exc, countdown=10 * (self.request.retries + 1))
