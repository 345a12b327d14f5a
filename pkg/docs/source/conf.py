from importlib.metadata import version

project = "regime-tta"
copyright = "2026, regime-tta developers"
author = "regime-tta developers"
release = version("regime-tta")

extensions = [
    "sphinx.ext.napoleon",
    "sphinx.ext.autosectionlabel",
    "sphinx_immaterial",
    "sphinx_immaterial.apidoc.python.apigen",
    "sphinx.ext.intersphinx",
    "sphinx.ext.doctest",
]

napoleon_google_docstring = False
napoleon_numpy_docstring = True

napoleon_include_init_with_doc = True
napoleon_include_private_with_doc = False
napoleon_include_special_with_doc = False
napoleon_use_admonition_for_examples = False
napoleon_use_admonition_for_notes = True
napoleon_use_admonition_for_references = False
napoleon_use_ivar = False
napoleon_use_rtype = False
napoleon_preprocess_types = True
napoleon_attr_annotations = True

add_module_names = True
autosectionlabel_prefix_document = True

exclude_patterns = []

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "scipy": ("https://docs.scipy.org/doc/scipy", None),
    "pandas": ("https://pandas.pydata.org/docs/", None),
}

html_title = "regime-tta"
html_theme = "sphinx_immaterial"

html_theme_options = {
    "icon": {
        "logo": "material/chart-bell-curve-cumulative",
    },
    "palette": {
        "scheme": "slate",
        "primary": "black",
    },
    "toc_title": "Contents",
}

python_apigen_order_tiebreaker = "alphabetical"

python_apigen_modules = {
    "regime_tta.core": "pages/generated/core/",
    "regime_tta.similarity": "pages/generated/similarity/",
    "regime_tta.memory": "pages/generated/memory/",
    "regime_tta.forecast": "pages/generated/forecast/",
    "regime_tta.policies": "pages/generated/policies/",
    "regime_tta.datagen": "pages/generated/datagen/",
    "regime_tta.harness": "pages/generated/harness/",
    "regime_tta.stats": "pages/generated/stats/",
    "regime_tta.data_processing": "pages/generated/data_processing/",
}

python_apigen_default_groups = [
    (r".*regime_tta\.core.*", "core"),
    (r".*regime_tta\.similarity.*", "similarity"),
    (r".*regime_tta\.memory.*", "memory"),
    (r".*regime_tta\.forecast.*", "forecast"),
    (r"class:.*AdaptivePolicy.*", "adaptive_policy_class"),
    (r"method:.*AdaptivePolicy.*", "AdaptivePolicy Methods"),
    (r"class:.*RetrainPolicy.*", "retrain_policy_class"),
    (r".*regime_tta\.policies.*", "policies"),
    (r".*regime_tta\.datagen.*", "datagen"),
    (r".*regime_tta\.harness.*", "harness"),
    (r".*regime_tta\.stats.*", "stats"),
    (r".*data_processing.*", "data_processing"),
]
