from django import forms
from django.core.exceptions import ValidationError
from django.core.management.base import CommandError

from .exceptions import InvalidParameterError
from .inference import FitConfig
from .simulate import ALPHA_SETTINGS, SimConfig, resolve_alpha

SEED_MAX = 2**64 - 1


def validate_alpha(value):
    """Accept a float or one of the symbolic persistence settings."""
    if value in ALPHA_SETTINGS:
        return value
    try:
        float(value)
    except (TypeError, ValueError):
        choices = ", ".join(sorted(ALPHA_SETTINGS))
        raise ValidationError(f"Enter a number or one of {choices}")
    return value


def validate_seed_list(value):
    seeds = []
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            seed = int(item)
        except ValueError:
            raise ValidationError(f"Restart seed {item!r} is not an integer")
        if not 0 <= seed <= SEED_MAX:
            raise ValidationError(f"Restart seed {seed} is out of range")
        seeds.append(seed)
    return seeds


def bind(form_class, options):
    """
    Validate command options with a form and return it.

    Raises:
        CommandError: with ``returncode=2`` when any option is invalid, so
            the process exits with the usage-error status.
    """
    data = {k: v for k, v in options.items() if v is not None}
    form = form_class(data)
    if not form.is_valid():
        problems = []
        for name, errors in form.errors.items():
            label = "options" if name == "__all__" else f"--{name.replace('_', '-')}"
            problems.extend(f"{label}: {error}" for error in errors)
        raise CommandError("; ".join(problems), returncode=2)
    return form


class SeedField(forms.IntegerField):
    def __init__(self, **kwargs):
        kwargs.setdefault("min_value", 0)
        kwargs.setdefault("max_value", SEED_MAX)
        super().__init__(**kwargs)


class PositiveFloatField(forms.FloatField):
    def validate(self, value):
        super().validate(value)
        if value is not None and value <= 0:
            raise ValidationError("Must be positive")


class SimulateForm(forms.Form):
    n = forms.IntegerField(min_value=2, required=False)
    T = forms.IntegerField(min_value=1)
    alpha = forms.CharField(validators=[validate_alpha], initial="0")
    beta = forms.FloatField(required=False)
    gamma = forms.FloatField(required=False)
    u_mean = forms.FloatField(required=False)
    u_sd = PositiveFloatField(required=False)
    theta_mean = forms.FloatField(required=False)
    theta_sd = PositiveFloatField(required=False)
    seed = SeedField(required=False)
    sample_from = forms.CharField(required=False)

    def clean(self):
        cleaned = super().clean()
        if not cleaned.get("sample_from") and cleaned.get("n") is None:
            raise ValidationError("--n is required unless --sample-from is given")
        return cleaned

    def sim_config(self, n=None):
        """SimConfig for these options; ``n`` overrides the flag (sample-from)."""
        data = self.cleaned_data
        n = n if n is not None else data["n"]
        values = {
            "n": n,
            "T": data["T"],
            "alpha": resolve_alpha(data.get("alpha") or "0", n),
        }
        for name in ("beta", "gamma", "u_mean", "u_sd", "theta_mean", "theta_sd"):
            if data.get(name) is not None:
                values[name] = data[name]
        if data.get("seed") is not None:
            values["seed"] = data["seed"]
        try:
            return SimConfig(**values)
        except InvalidParameterError as exc:
            raise CommandError(str(exc), returncode=2) from exc


class FitForm(forms.Form):
    max_em_iters = forms.IntegerField(min_value=1, required=False)
    em_tol = PositiveFloatField(required=False)
    mstep_tol = PositiveFloatField(required=False)
    mstep_grad_tol = PositiveFloatField(required=False)
    mstep_max_cycles = forms.IntegerField(min_value=1, required=False)
    newton_max_steps = forms.IntegerField(min_value=1, required=False)
    newton_damping = forms.IntegerField(min_value=0, required=False)
    theta_max = PositiveFloatField(required=False)
    independent = forms.BooleanField(required=False)
    restart_seeds = forms.CharField(required=False)
    restart_scale = PositiveFloatField(required=False)

    def clean_restart_seeds(self):
        return tuple(validate_seed_list(self.cleaned_data.get("restart_seeds") or ""))

    def fit_config(self, **overrides):
        """FitConfig from settings, these options and ``overrides``, in that order."""
        data = {k: v for k, v in self.cleaned_data.items() if k in FitForm.base_fields}
        data["constrain_independent"] = data.pop("independent", False)
        if not data.get("restart_seeds"):
            data.pop("restart_seeds", None)
        data.update(overrides)
        try:
            return FitConfig.from_settings(**data)
        except InvalidParameterError as exc:
            raise CommandError(str(exc), returncode=2) from exc


class BootstrapForm(FitForm):
    replicates = forms.IntegerField(min_value=2, required=False)
    level = forms.FloatField(required=False)
    seed = SeedField(required=False)
    jobs = forms.IntegerField(min_value=1, required=False)

    def clean_level(self):
        level = self.cleaned_data.get("level")
        if level is not None and not 0 < level < 1:
            raise ValidationError("Level must be strictly between 0 and 1")
        return level


class StudyForm(forms.Form):
    n = forms.IntegerField(min_value=2)
    T = forms.IntegerField(min_value=1)
    alpha = forms.CharField(validators=[validate_alpha])
    beta = forms.FloatField()
    gamma = forms.FloatField()
    replicates = forms.IntegerField(min_value=1)
    seed = SeedField(required=False)

    def alpha_value(self):
        data = self.cleaned_data
        return resolve_alpha(data["alpha"], data["n"])
