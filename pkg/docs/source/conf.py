import craterkit

project = 'craterkit'
copyright = '2026, craterkit authors'
author = 'craterkit authors'
version = release = craterkit.__version__

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.viewcode',
    'alabaster',
]

master_doc = 'index'
exclude_patterns = []

html_theme = 'alabaster'
html_theme_options = {
    'code_font_size': '0.8em',
    'show_related': False,
}
html_sidebars = {
    '**': [
        'about.html',
        'navigation.html',
        'searchbox.html',
    ]
}
