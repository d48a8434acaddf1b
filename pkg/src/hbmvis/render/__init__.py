from hbmvis.render.figures import (
    render_data_space,
    render_offset_plot,
    render_param_compare,
    render_prediction_error,
)
from hbmvis.render.palette import Palette, group_role, lighten, load_palette
from hbmvis.render.svg import Scene, emit_svg, nice_ticks

__all__ = [
    "Palette",
    "Scene",
    "emit_svg",
    "group_role",
    "lighten",
    "load_palette",
    "nice_ticks",
    "render_data_space",
    "render_offset_plot",
    "render_param_compare",
    "render_prediction_error",
]
