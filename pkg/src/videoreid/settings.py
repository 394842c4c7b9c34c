"""
Django settings for the videoreid toolkit.

Only the pieces the toolkit uses are configured: installed apps (for
management command discovery), environment-driven runtime defaults and
logging. There is no database; nothing in the toolkit issues queries.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent

SECRET_KEY = os.getenv('SECRET_KEY', 'videoreid-local-only')

# Application definition
INSTALLED_APPS = [
    'rest_framework',
    # Custom apps
    'shared',
    'reid',
]

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# Toolkit runtime defaults
REID_DEVICE = os.getenv('REID_DEVICE', 'cpu')
REID_NUM_WORKERS = int(os.getenv('REID_NUM_WORKERS', '0'))
REID_RUNS_DIR = Path(os.getenv('REID_RUNS_DIR', str(BASE_DIR / 'runs')))
REID_DATA_ROOT = Path(os.getenv('REID_DATA_ROOT', str(BASE_DIR / 'data')))

# Logging Configuration
LOG_DIR = Path(os.getenv('REID_LOG_DIR', str(BASE_DIR / 'logs')))
LOG_DIR.mkdir(parents=True, exist_ok=True)
LOG_LEVEL = os.getenv('REID_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'success_file': {
            'level': 'INFO',
            'class': 'logging.FileHandler',
            'filename': LOG_DIR / 'success.log',
            'formatter': 'verbose',
        },
        'error_file': {
            'level': 'ERROR',
            'class': 'logging.FileHandler',
            'filename': LOG_DIR / 'error.log',
            'formatter': 'verbose',
        },
        'console': {
            'level': LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'shared': {
            'handlers': ['success_file', 'error_file', 'console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'reid': {
            'handlers': ['success_file', 'error_file', 'console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'videoreid': {
            'handlers': ['success_file', 'error_file', 'console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}
