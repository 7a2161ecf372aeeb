"""Experiment config: YAML text validated by nested serializers.

Validated data is plain dicts, lists and scalars, so dumping it with
``yaml.safe_dump(sort_keys=True)`` and loading it again reproduces it exactly.
"""
from typing import Any, Optional

import yaml
from django.conf import settings
from rest_framework import serializers

from apps.driving.constants import get_driving_kinds
from apps.driving.types import ParameterRule
from apps.evt.constants import SURVIVAL_SIGMA, get_observable_families
from apps.experiments.constants import CONFIG_SECTIONS
from apps.experiments.services import driving_for
from apps.interval_maps.constants import get_map_families
from apps.limits.constants import DEFAULT_LAGS, get_observable_kinds, get_radius_kinds
from apps.perturb.constants import get_default_eps_ladder, get_mask_rules


class ConfigError(Exception):
    """The experiment config does not parse or does not validate."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


class ParameterRuleField(serializers.Field):
    """A number, or a one-key mapping {table | linear | bins: [values]}."""

    def to_internal_value(self, data):
        if isinstance(data, bool):
            raise serializers.ValidationError("Expected a number or a rule mapping, got a boolean.")
        if isinstance(data, str):
            try:
                data = float(data)
            except ValueError:
                raise serializers.ValidationError(f"Cannot read a parameter rule from {data!r}.")
        try:
            rule = ParameterRule.from_config(data)
        except (TypeError, ValueError) as exc:
            raise serializers.ValidationError(str(exc))
        if rule.kind == "constant":
            return rule.values[0]
        return {rule.kind: list(rule.values)}

    def to_representation(self, value):
        return value


def _strictly_increasing(values, what: str):
    if any(b <= a for a, b in zip(values, values[1:])):
        raise serializers.ValidationError(f"{what} must be strictly increasing.")


class DrivingSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=get_driving_kinds(), default="bernoulli-shift")
    alphabet_size = serializers.IntegerField(min_value=2, default=2)
    weights = serializers.ListField(child=serializers.FloatField(min_value=0.0), required=False)
    transition = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(min_value=0.0)), required=False
    )
    alpha = serializers.FloatField(required=False)
    base_point = serializers.FloatField(min_value=0.0, max_value=1.0, required=False, allow_null=True)

    def validate(self, attrs):
        if attrs["kind"] == "circle-rotation":
            if "alpha" not in attrs:
                raise serializers.ValidationError({"alpha": "A circle rotation needs an angle."})
            return attrs
        if attrs["kind"] == "markov-shift" and "transition" not in attrs:
            raise serializers.ValidationError({"transition": "A Markov shift needs a transition matrix."})
        if "weights" in attrs and len(attrs["weights"]) != attrs["alphabet_size"]:
            raise serializers.ValidationError(
                {"weights": f"Expected {attrs['alphabet_size']} weights, got {len(attrs['weights'])}."}
            )
        return attrs


class MapSerializer(serializers.Serializer):
    family = serializers.ChoiceField(choices=get_map_families(), default="example1")
    params = serializers.DictField(child=ParameterRuleField(), default=dict)

    def validate(self, attrs):
        required = {"example1": ("s",), "beta": ("beta",)}[attrs["family"]]
        missing = [name for name in required if name not in attrs["params"]]
        if missing:
            raise serializers.ValidationError({"params": f"Missing map parameters: {', '.join(missing)}."})
        return attrs


class ObservableSerializer(serializers.Serializer):
    family = serializers.ChoiceField(choices=get_observable_families(), default="distance")
    center = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.5)
    circle = serializers.BooleanField(default=False)
    jitter = serializers.FloatField(default=0.0)
    params = serializers.DictField(child=ParameterRuleField(), default=dict)


class GridSerializer(serializers.Serializer):
    cells = serializers.IntegerField(min_value=2, default=lambda: settings.DEFAULT_GRID_CELLS)
    align = serializers.BooleanField(default=True)

    def validate_cells(self, value):
        if value > settings.MAX_GRID_CELLS:
            raise serializers.ValidationError(f"Ensure this value is less than or equal to {settings.MAX_GRID_CELLS}.")
        return value


class WindowSerializer(serializers.Serializer):
    K = serializers.IntegerField(min_value=0, default=60)
    N = serializers.IntegerField(min_value=0, default=600)


class SeedsSerializer(serializers.Serializer):
    path = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, default=0)
    mc = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, default=1)


class EvtSerializer(serializers.Serializer):
    ladder = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1, default=lambda: [256])
    lo = serializers.IntegerField(default=0)
    hi = serializers.IntegerField(required=False, allow_null=True, default=None)
    k_max = serializers.IntegerField(min_value=1, default=lambda: settings.KMAX_DEFAULT)
    bias = serializers.FloatField(default=0.0)
    theta_fibers = serializers.IntegerField(min_value=1, default=200)
    fiber = serializers.IntegerField(default=0)
    samples = serializers.IntegerField(min_value=1, default=20000)
    horizon = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    theta = serializers.FloatField(required=False, allow_null=True, default=None)
    period = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)

    def validate_ladder(self, value):
        _strictly_increasing(value, "N ladder")
        return value

    def validate(self, attrs):
        if attrs["hi"] is not None and attrs["hi"] < attrs["lo"]:
            raise serializers.ValidationError({"hi": "Must not be smaller than lo."})
        return attrs


class RadiusSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=get_radius_kinds(), default="harmonic")
    scale = serializers.FloatField(min_value=0.0, default=0.1)
    exponent = serializers.FloatField(min_value=0.0, default=1.0)


class LimitsObservableSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=get_observable_kinds(), default="indicator")
    interval = serializers.ListField(
        child=serializers.FloatField(min_value=0.0, max_value=1.0), min_length=2, max_length=2, default=lambda: [0.0, 0.5]
    )
    frequency = serializers.FloatField(default=1.0)
    values = serializers.ListField(child=serializers.FloatField(), default=list)

    def validate_interval(self, value):
        _strictly_increasing(value, "Interval endpoints")
        return value


class LimitsSerializer(serializers.Serializer):
    observable = LimitsObservableSerializer()
    fiber = serializers.IntegerField(default=0)
    n = serializers.IntegerField(min_value=1, default=256)
    samples = serializers.IntegerField(min_value=1, default=20000)
    lags = serializers.IntegerField(min_value=0, default=DEFAULT_LAGS)
    deviations = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=1, default=lambda: [0.2])
    horizons = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1, default=lambda: [256])
    radius = RadiusSerializer()
    center = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.3)

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = {"observable": {}, "radius": {}, **data}
        return super().to_internal_value(data)

    def validate_horizons(self, value):
        _strictly_increasing(value, "Horizons")
        return value


class MatrixSerializer(serializers.Serializer):
    d = serializers.IntegerField(min_value=1, default=5)
    cocycles = serializers.IntegerField(min_value=1, default=20)
    K = serializers.IntegerField(min_value=1, default=80)
    N = serializers.IntegerField(min_value=1, default=80)
    fiber = serializers.IntegerField(default=0)
    eps_ladder = serializers.ListField(
        child=serializers.FloatField(min_value=0.0), min_length=2, default=get_default_eps_ladder
    )
    rule = serializers.ChoiceField(choices=get_mask_rules(), default="coordinate")

    def validate_eps_ladder(self, value):
        if any(b >= a for a, b in zip(value, value[1:])):
            raise serializers.ValidationError("Perturbation ladder must be strictly decreasing.")
        return value


class TolerancesSerializer(serializers.Serializer):
    theta = serializers.FloatField(min_value=0.0, default=1e-2)
    qhat_mass = serializers.FloatField(min_value=0.0, default=1e-3)
    gumbel = serializers.FloatField(min_value=0.0, default=0.03)
    ks = serializers.FloatField(min_value=0.0, default=0.02)
    sigma = serializers.FloatField(min_value=0.0, default=SURVIVAL_SIGMA)
    escape = serializers.FloatField(min_value=0.0, default=1e-2)
    identity = serializers.FloatField(min_value=0.0, default=1e-10)
    variance = serializers.FloatField(min_value=0.0, default=0.02)
    borel_cantelli = serializers.FloatField(min_value=0.0, default=0.05)
    first_order = serializers.FloatField(min_value=0.0, default=1e-8)


class ExperimentConfigSerializer(serializers.Serializer):
    name = serializers.CharField(default="experiment")
    driving = DrivingSerializer()
    maps = MapSerializer()
    weight_exponent = serializers.FloatField(min_value=0.0, default=1.0)
    observable = ObservableSerializer()
    scaling = ParameterRuleField(default=1.0)
    grid = GridSerializer()
    window = WindowSerializer()
    seeds = SeedsSerializer()
    threads = serializers.IntegerField(min_value=1, default=1)
    output = serializers.CharField(allow_blank=True, default="")
    evt = EvtSerializer()
    limits = LimitsSerializer()
    matrix = MatrixSerializer()
    tolerances = TolerancesSerializer()

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = {**{section: {} for section in CONFIG_SECTIONS}, **data}
        return super().to_internal_value(data)

    def validate(self, attrs):
        try:
            driving_for(_plain(attrs))
        except ValueError as exc:
            raise serializers.ValidationError({"driving": str(exc)})
        return attrs


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _flatten(errors: Any, prefix: str = "") -> list[tuple[str, str]]:
    if isinstance(errors, dict):
        found = []
        for key, value in errors.items():
            path = prefix if key == "non_field_errors" else (f"{prefix}.{key}" if prefix else str(key))
            found.extend(_flatten(value, path))
        return found
    if isinstance(errors, list):
        if all(isinstance(e, str) for e in errors):
            return [(prefix, str(e)) for e in errors]
        found = []
        for index, value in enumerate(errors):
            if value:
                found.extend(_flatten(value, f"{prefix}.{index}" if prefix else str(index)))
        return found
    return [(prefix, str(errors))]


def _line_of(node: Optional[yaml.Node], path: str) -> Optional[int]:
    """1-based YAML line of the deepest node on ``path`` that exists."""
    line = None
    for part in [p for p in path.split(".") if p]:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == part), None)
            if match is None:
                return line
            node = match
        elif isinstance(node, yaml.SequenceNode) and part.isdigit() and int(part) < len(node.value):
            node = node.value[int(part)]
        else:
            return line
        line = node.start_mark.line + 1
    return line


def load_config(text: str) -> dict[str, Any]:
    """Parse and validate YAML config text; raise ConfigError with dotted field paths."""
    try:
        raw = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError([f"config: invalid YAML{where}: {exc}"])
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["config: expected a mapping of sections"])

    serializer = ExperimentConfigSerializer(data=raw)
    if not serializer.is_valid():
        messages = []
        for path, message in _flatten(serializer.errors):
            line = _line_of(root, path)
            messages.append(f"{path or 'config'}: {message}" + (f" (line {line})" if line else ""))
        raise ConfigError(messages)
    return _plain(serializer.validated_data)


def load_config_file(path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as handle:
        return load_config(handle.read())


def dump_config(config: dict[str, Any]) -> str:
    return yaml.safe_dump(_plain(config), sort_keys=True, allow_unicode=True, default_flow_style=False)
