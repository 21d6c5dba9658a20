#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# Transpotter Kit documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import sys
import os

# Document the package from the repository root
sys.path.insert(0, os.path.abspath('../'))

import transpotter_kit

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.doctest',
    'sphinx.ext.todo',
    'sphinx.ext.coverage',
    'sphinx.ext.napoleon',
    'sphinx.ext.mathjax',
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'Transpotter Kit'
version = transpotter_kit.__version__
release = version

exclude_patterns = ['_build']
pygments_style = 'sphinx'

# Keep signatures readable; torch types are long
autodoc_typehints = 'description'
autodoc_member_order = 'bysource'

# -- Options for HTML output ----------------------------------------------

html_theme = 'sphinxdoc'
html_static_path = ['_static']
htmlhelp_basename = 'TranspotterKitdoc'

# -- Options for LaTeX output ---------------------------------------------

latex_elements = {}
latex_documents = [
  ('index', 'TranspotterKit.tex', 'Transpotter Kit Documentation',
   'Transpotter Kit contributors', 'manual'),
]

# -- Options for manual page output ---------------------------------------

man_pages = [
    ('index', 'transpotter', 'Transpotter Kit Documentation',
     ['Transpotter Kit contributors'], 1)
]
