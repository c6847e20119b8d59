"""`sweep`: equilibrium profile as one parameter varies."""

import logging
import math
from pathlib import Path

from app.commands import output
from app.commands.solve import solver_context
from app.core.errors import ConfigError, RenegeError
from app.models.run_config import RunConfig
from app.services.distributions import build_service_model
from app.services.equilibrium import solve_equilibrium

logger = logging.getLogger(__name__)

MARKET_FIELDS = {"lambda": "lam", "lam": "lam", "V": "V", "C": "C"}


def parse_values(raw: str | list[float]) -> list[float]:
    if isinstance(raw, str):
        try:
            values = [float(v) for v in raw.split(",") if v.strip()]
        except ValueError as e:
            raise ConfigError(f"sweep values must be numbers: {raw}") from e
    else:
        values = list(raw)
    if not values:
        raise ConfigError("empty sweep range")
    return values


def with_parameter(run: RunConfig, parameter: str, value: float) -> RunConfig:
    """
    Copy of `run` with one parameter replaced.

    Market parameters are named lambda, V, C; service-model fields are
    prefixed with `model.`, e.g. model.rate or model.rates.1.
    """
    try:
        if parameter in MARKET_FIELDS:
            market = run.market.model_dump()
            market[MARKET_FIELDS[parameter]] = value
            return RunConfig.model_validate({**run.model_dump(by_alias=False), "market": market})
        if parameter.startswith("model."):
            spec = run.model.model_dump()
            *path, last = parameter.split(".")[1:]
            target = spec
            for key in path:
                target = target[int(key)] if isinstance(target, list) else target[key]
            if isinstance(target, list):
                target[int(last)] = value
            elif last in target:
                target[last] = value
            else:
                raise KeyError(last)
            return RunConfig.model_validate({**run.model_dump(by_alias=False), "model": spec})
    except (KeyError, IndexError, ValueError) as e:
        raise ConfigError(f"cannot sweep {parameter}={value}: {e}") from e
    raise ConfigError(f"unknown sweep parameter: {parameter} (use lambda, V, C or model.<field>)")


def cmd_sweep(run: RunConfig, parameter: str, values: str | list[float], out: str | Path | None = None) -> int:
    """Solve at every value and write sweep.csv (one profile per row)."""
    directory = output.out_dir(out or run.output.directory)
    values = parse_values(values)
    rows = []
    width_t = width_s = 0
    for value in values:
        point = with_parameter(run, parameter, value)
        model = build_service_model(point.model)
        try:
            profile = solve_equilibrium(point.market, model, context=solver_context(point))
        except RenegeError as e:
            logger.error(f"Sweep {parameter}={value} failed: {e.detail}")
            raise
        print(f"{parameter}={output.fmt(value)}  {output.profile_table(profile)}")
        width_t = max(width_t, len(profile.T))
        width_s = max(width_s, len(profile.S))
        rows.append((value, profile))

    header = [parameter, "n_max"] + [f"T{i}" for i in range(1, width_t + 1)] + [f"S{i}" for i in range(1, width_s + 1)]
    table = []
    for value, profile in rows:
        T = profile.T + [math.nan] * (width_t - len(profile.T))
        S = profile.S + [math.nan] * (width_s - len(profile.S))
        table.append([float(value), str(profile.n_max)] + [float(v) for v in T + S])
    output.write_csv(directory / "sweep.csv", header, table)
    return 0
