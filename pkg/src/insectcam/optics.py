"""Optical design arithmetic for the imaging unit.

Lengths are carried internally in micrometers; millimeter values appear only at
the function boundaries where the field names say so.
"""

import math
from dataclasses import asdict, dataclass
from typing import Any

from .errors import DomainError

UM_PER_MM = 1000.0
UM_PER_M = 1_000_000.0
AIRY_FACTOR = 2.44

DEFAULT_WAVELENGTH_UM = 0.55
DEFAULT_PIXEL_PITCH_UM = 1.55  # IMX477 datasheet
DEFAULT_SENSOR_WIDTH_MM = 6.287
DEFAULT_FOV_WIDTH_MM = 60.0


def _require_positive(**values: float) -> None:
    for name, v in values.items():
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise DomainError(f"{name} must be a positive finite number, got {v!r}")


@dataclass(frozen=True)
class OpticalConfig:
    aperture_number: float = 8.0
    wavelength: float = DEFAULT_WAVELENGTH_UM  # µm
    pixel_pitch: float = DEFAULT_PIXEL_PITCH_UM  # µm
    sensor_width: float = DEFAULT_SENSOR_WIDTH_MM  # mm
    fov_width: float = DEFAULT_FOV_WIDTH_MM  # mm
    circle_of_confusion: float | None = None  # µm; None = Airy diameter
    flash_duration: float = 500e-6  # s
    exposure_time: float = 23.5e-3  # s

    def __post_init__(self):
        _require_positive(
            aperture_number=self.aperture_number,
            wavelength=self.wavelength,
            pixel_pitch=self.pixel_pitch,
            sensor_width=self.sensor_width,
            fov_width=self.fov_width,
            flash_duration=self.flash_duration,
            exposure_time=self.exposure_time,
        )
        if self.circle_of_confusion is not None:
            _require_positive(circle_of_confusion=self.circle_of_confusion)
        if self.fov_width <= self.sensor_width:
            raise DomainError(
                f"fov_width ({self.fov_width} mm) must exceed sensor_width ({self.sensor_width} mm)"
            )

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OpticalConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)

    def effective_circle_of_confusion(self) -> float:
        if self.circle_of_confusion is not None:
            return self.circle_of_confusion
        return airy_disk_diameter(self.wavelength, self.aperture_number)


@dataclass(frozen=True)
class OpticsReport:
    magnification: float
    airy_diameter_chip: float  # µm
    depth_of_field: float  # mm
    blur_object: float  # mm
    blur_chip: float  # µm
    blur_pixels: float
    blur_to_diffraction_ratio: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class MotionBlur:
    blur_object: float  # mm
    blur_chip: float  # µm
    blur_pixels: float


def magnification(sensor_width: float, fov_width: float) -> float:
    _require_positive(sensor_width=sensor_width, fov_width=fov_width)
    return sensor_width / fov_width


def airy_disk_diameter(wavelength: float, aperture_number: float) -> float:
    """Diameter (µm) of the first Airy minimum on the chip."""
    _require_positive(wavelength=wavelength, aperture_number=aperture_number)
    return AIRY_FACTOR * wavelength * aperture_number


def depth_of_field(aperture_number: float, circle_of_confusion: float, magnification: float) -> float:
    """Thin-lens close-up depth of field in mm: 2·N·c·(1+m)/m²."""
    _require_positive(
        aperture_number=aperture_number,
        circle_of_confusion=circle_of_confusion,
        magnification=magnification,
    )
    m = magnification
    dof_um = 2.0 * aperture_number * circle_of_confusion * (1.0 + m) / (m * m)
    return dof_um / UM_PER_MM


def motion_blur(speed: float, flash_duration: float, magnification: float, pixel_pitch: float) -> MotionBlur:
    """Blur of an insect moving at speed (m/s) during the flash."""
    _require_positive(
        speed=speed,
        flash_duration=flash_duration,
        magnification=magnification,
        pixel_pitch=pixel_pitch,
    )
    path_um = speed * flash_duration * UM_PER_M
    chip_um = path_um * magnification
    return MotionBlur(
        blur_object=path_um / UM_PER_MM,
        blur_chip=chip_um,
        blur_pixels=chip_um / pixel_pitch,
    )


def exposure_blur(speed: float, exposure_time: float) -> float:
    """Object-side path (mm) over the whole exposure, i.e. without flash freezing."""
    _require_positive(speed=speed, exposure_time=exposure_time)
    return speed * exposure_time * UM_PER_M / UM_PER_MM


def flash_freeze_factor(config: OpticalConfig) -> float:
    return config.exposure_time / config.flash_duration


def design_report(config: OpticalConfig, insect_speed: float) -> OpticsReport:
    m = magnification(config.sensor_width, config.fov_width)
    airy = airy_disk_diameter(config.wavelength, config.aperture_number)
    dof = depth_of_field(config.aperture_number, config.effective_circle_of_confusion(), m)
    blur = motion_blur(insect_speed, config.flash_duration, m, config.pixel_pitch)
    return OpticsReport(
        magnification=m,
        airy_diameter_chip=airy,
        depth_of_field=dof,
        blur_object=blur.blur_object,
        blur_chip=blur.blur_chip,
        blur_pixels=blur.blur_pixels,
        blur_to_diffraction_ratio=blur.blur_chip / airy,
    )


def supplement(config: OpticalConfig, insect_speed: float) -> dict[str, float]:
    return {
        "exposure_blur_object": exposure_blur(insect_speed, config.exposure_time),
        "flash_freeze_factor": flash_freeze_factor(config),
        "circle_of_confusion": config.effective_circle_of_confusion(),
    }
