# Configuration file for the Sphinx documentation builder.
#
# For the full list of options see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import selectcn

# -- Project information -----------------------------------------------------

project = "selectcn"
copyright = "selectcn developers"
author = "selectcn developers"

# The short X.Y version.
version = selectcn.__version__
# The full version, including alpha/beta/rc tags.
release = selectcn.__version__

# -- General configuration ---------------------------------------------------

extensions = [
    "numpydoc",
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.intersphinx",
    "sphinx.ext.mathjax",
    "sphinx.ext.viewcode",
    "sphinx_click",
]

templates_path = ["_templates"]
source_suffix = ".rst"
master_doc = "index"
exclude_patterns = []
pygments_style = "sphinx"

# -- Options for HTML output -------------------------------------------------

html_theme = "alabaster"

description = "Heckman selection models with contaminated-normal errors"

html_theme_options = {
    "logo_name": True,
    "description": description,
    "page_width": "1100px",
    "sidebar_width": "240px",
    "code_bg": "#EEE",
    "note_bg": "#EEE",
    "seealso_bg": "#EEE",
}

# Intersphinx configuration
intersphinx_mapping = {
    "python": ("https://docs.python.org/3/", None),
    "pandas": ("https://pandas.pydata.org/pandas-docs/stable/", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
}

# Autodoc configuration
autodoc_typehints = "none"
numpydoc_show_class_members = False
