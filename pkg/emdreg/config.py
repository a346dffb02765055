import enum
import pathlib
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .emd import SiftParams
from .errors import ConfigError
from .lasso import CvScheme
from .memd import NoiseConfig
from .series import BoundaryPolicy, PlateauRule


class Design(str, enum.Enum):
    R1 = "r1"
    R2 = "r2"
    BOTH = "both"


class RunConfig(BaseModel):
    """A class to configure an EMD-regression run, from the decomposition to the bootstrap."""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    response: str = Field(
        ...,
        description="The name of the CSV column holding the response series Y.",
    )
    predictors: List[str] = Field(
        ...,
        description="The names of the CSV columns holding the predictor series X_j, comma separated in config files.",
    )
    date_column: Optional[str] = Field(
        None,
        description="The name of the ISO-8601 date column, dates have to be consecutive days. Needed for the day-of-year report.",
    )
    design: Design = Field(
        Design.BOTH,
        description="Which regression design to fit: r1 (predictor IMFs explain Y), r2 (one model per IMF order plus the trend) or both.",
    )
    theta1: float = Field(
        0.05,
        description="The sifting stops when the mean-to-amplitude ratio is below theta1 on a fraction 1 - alpha of the samples.",
    )
    theta2: float = Field(
        0.5,
        description="And the mean-to-amplitude ratio is below theta2 everywhere.",
    )
    alpha: float = Field(
        0.05,
        description="The fraction of samples allowed to exceed theta1 in the sifting stopping test.",
    )
    max_sift_iters: int = Field(
        200,
        description="The maximum number of sifting iterations per IMF before the prototype is accepted with a warning.",
    )
    max_imfs: Optional[int] = Field(
        None,
        description="The maximum number of IMFs to extract, None lets the residue decide.",
    )
    boundary: BoundaryPolicy = Field(
        BoundaryPolicy.MIRROR,
        description="How the envelope knots are extended past the series ends: mirror or clamp.",
    )
    plateau: PlateauRule = Field(
        PlateauRule.MIDDLE,
        description="Where the extremum of a flat run of equal values is placed: middle or first.",
    )
    n_noise: int = Field(
        2,
        description="The number of white noise channels appended for the noise-assisted decomposition.",
    )
    noise_variance_ratio: float = Field(
        0.10,
        description="The variance of each noise channel relative to the mean variance of the data channels.",
    )
    n_directions: int = Field(
        128,
        description="The number of projection directions used for the multivariate envelopes.",
    )
    standardize_channels: bool = Field(
        True,
        description="If the channels should be sifted at zero mean and unit variance, the IMFs are scaled back afterwards.",
    )
    cv_folds: int = Field(
        10,
        description="The number of cross-validation folds used to choose the Lasso lambda.",
    )
    cv_scheme: CvScheme = Field(
        CvScheme.BLOCKS,
        description="blocks uses contiguous segments as folds, random uses a seeded random partition.",
    )
    n_lambda: int = Field(
        100,
        description="The number of lambda values on the log-spaced path.",
    )
    lambda_ratio: float = Field(
        1e-4,
        description="The smallest lambda of the path relative to lambda_max.",
    )
    bootstrap_reps: int = Field(
        500,
        description="The number of moving-block bootstrap replications.",
    )
    block_len: Optional[int] = Field(
        None,
        description="The bootstrap block length in samples, None uses ceil(n^(1/3)).",
    )
    seed: int = Field(
        0,
        description="The master seed, it drives the noise channels, the direction offset, random folds and the bootstrap.",
    )
    threads: Optional[int] = Field(
        None,
        description="The number of worker threads for the parallel fits, None uses all cores.",
    )
    output_dir: Optional[str] = Field(
        None,
        description="The default output folder when none is given on the command line.",
    )

    @field_validator("predictors", mode="before")
    @classmethod
    def _split_predictors(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [name.strip() for name in value.split(",") if name.strip()]
        return value

    @field_validator("predictors")
    @classmethod
    def _has_predictors(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("at least one predictor is needed")
        if len(set(value)) != len(value):
            raise ValueError(f"predictors are repeated: {value}")
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> "RunConfig":
        if not 0 < self.theta1 < self.theta2:
            raise ValueError(f"need 0 < theta1 < theta2, got {self.theta1} and {self.theta2}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha has to be in (0, 1), got {self.alpha}")
        if self.n_noise < 1:
            raise ValueError("n_noise has to be at least 1")
        if not 0 < self.noise_variance_ratio < 1:
            raise ValueError(f"noise_variance_ratio has to be in (0, 1), got {self.noise_variance_ratio}")
        if self.response in self.predictors:
            raise ValueError(f"the response '{self.response}' is also listed as a predictor")
        if self.cv_folds < 2:
            raise ValueError("cv_folds has to be at least 2")
        if self.max_sift_iters < 1:
            raise ValueError("max_sift_iters has to be at least 1")
        if self.bootstrap_reps < 2:
            raise ValueError("bootstrap_reps has to be at least 2")
        return self

    @classmethod
    def from_file(cls, path: Union[str, pathlib.Path], **overrides) -> "RunConfig":
        """
        Read a flat ``key = value`` config file. Blank lines and ``#`` comments are skipped;
        ``none`` clears an optional value. Keyword overrides win over the file.

        Raises:
            ConfigError: a malformed line, a repeated or unknown key, or an invalid value
        """
        values: Dict[str, Any] = {}
        text = pathlib.Path(path).read_text()
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got '{raw.strip()}'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in values:
                raise ConfigError(f"{path}:{number}: '{key}' is set twice")
            values[key] = None if value.lower() in ("none", "") else value

        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls.build(**values)

    @classmethod
    def build(cls, **values) -> "RunConfig":
        """Validate the values, pydantic errors are reported as a ConfigError."""
        from pydantic import ValidationError

        try:
            return cls(**values)
        except ValidationError as error:
            problems = "; ".join(
                f"{'.'.join(str(part) for part in item['loc']) or 'config'}: {item['msg']}" for item in error.errors()
            )
            raise ConfigError(f"Invalid configuration: {problems}") from None

    def sift_params(self) -> SiftParams:
        return SiftParams(
            theta1=self.theta1,
            theta2=self.theta2,
            alpha=self.alpha,
            max_sift_iters=self.max_sift_iters,
            max_imfs=self.max_imfs,
            boundary=self.boundary,
            plateau=self.plateau,
        )

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(n_noise=self.n_noise, variance_ratio=self.noise_variance_ratio, seed=self.seed)

    def manifest(self) -> Dict[str, Any]:
        """Every field, defaults included, as JSON-ready values."""
        return self.model_dump(mode="json")
