# Sphinx configuration for the CrowdKit docs.
import os
import sys

sys.path.insert(0, os.path.abspath("../../crowd_wrapper"))

from CrowdKit import __version__  # noqa: E402

project = "CrowdKit"
copyright = "2024, CrowdKit developers"
author = "CrowdKit developers"
release = __version__

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.napoleon",
    "sphinx_rtd_theme",
]
# open_clip is an optional extra.
autodoc_mock_imports = ["open_clip"]
autodoc_member_order = "bysource"
autoclass_content = "class"
napoleon_numpy_docstring = True
napoleon_google_docstring = False
master_doc = "index"

exclude_patterns = ["_build"]

html_theme = "sphinx_rtd_theme"
html_title = "CrowdKit {}".format(release)
