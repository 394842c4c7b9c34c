"""Video person re-identification toolkit (Django project package)."""
