"""qval-plot: render qval CSV/JSON reports into figures.

Reads only the documented report schemas (decay.csv, probe.csv,
taylor.csv, compare.json); never recomputes or imports the numerical
component.
"""

__version__ = "0.1.0"

from .figures import FigureSpec, SchemaError, build_figure, render
