"""
Video person re-identification toolkit.

Apps:
- shared: Exceptions and file helpers used across apps
- reid: Datasets, model, losses, training, evaluation and the command verbs
- videoreid: Django project settings
"""
