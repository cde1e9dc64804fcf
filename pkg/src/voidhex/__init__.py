"""voidhex: conformal all-hex meshing of the void space in packed sphere beds."""

from .bed import (
    Annulus,
    Box,
    Cylinder,
    SeparationProfile,
    SphereBed,
    attach_domain,
    fit_annulus,
    fit_box,
    fit_cylinder,
    load_centers,
    rescale,
    separation_profile,
    void_fraction,
)

__version__ = "0.1.0"
