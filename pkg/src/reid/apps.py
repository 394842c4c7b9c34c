"""
Re-identification app configuration.
"""

from django.apps import AppConfig


class ReidConfig(AppConfig):
    name = 'reid'
    verbose_name = 'Video Re-Identification'
