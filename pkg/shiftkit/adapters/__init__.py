"""Single- and multi-source domain adapters."""
from shiftkit.adapters.dadil import (
    Dictionary,
    dadil_e_predict,
    dadil_fit,
    dadil_r_transform,
    pseudo_label_target,
    train_atomic_classifiers,
)
from shiftkit.adapters.deep import dann_fit, deepjdot_fit, mmdnet_fit
from shiftkit.adapters.jdot import jdot_fit
from shiftkit.adapters.m3sda import m3sda_fit, m3sda_predict, m3sda_source_weights
from shiftkit.adapters.otda import otda_adapt
from shiftkit.adapters.tca import tca_adapt, tca_fit, tca_transform
from shiftkit.adapters.wbt import wbt_fit
from shiftkit.adapters.wjdot import WjdotModel, wjdot_fit

__all__ = [
    "Dictionary",
    "WjdotModel",
    "dadil_e_predict",
    "dadil_fit",
    "dadil_r_transform",
    "dann_fit",
    "deepjdot_fit",
    "jdot_fit",
    "m3sda_fit",
    "m3sda_predict",
    "m3sda_source_weights",
    "mmdnet_fit",
    "otda_adapt",
    "pseudo_label_target",
    "tca_adapt",
    "tca_fit",
    "tca_transform",
    "train_atomic_classifiers",
    "wbt_fit",
    "wjdot_fit",
]
