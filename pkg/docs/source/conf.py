# Sphinx configuration for fso-groom.
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys

DOCS_DIR = os.path.dirname(os.path.abspath(__file__))
REPO_DIR = os.path.abspath(os.path.join(DOCS_DIR, "..", ".."))

sys.path.insert(0, os.path.join(REPO_DIR, "src"))

project = 'fso-groom'
copyright = '2024, REDACTED'
author = 'REDACTED'

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.mathjax',
    'myst_parser'
]

autodoc_member_order = 'bysource'
autodoc_typehints = 'description'
exclude_patterns = []

html_theme = 'furo'
html_title = 'fso-groom'


def copy_readme():
    # index.rst includes the repository README; relative links must point back to the repository root.
    with open(os.path.join(REPO_DIR, "README.md"), "r") as file:
        content = file.read()
    content = content.replace("](scripts/", "](../../scripts/").replace("](docs/", "](../")
    with open(os.path.join(DOCS_DIR, "README_sphinx.md"), "w") as file:
        file.write(content)

copy_readme()
