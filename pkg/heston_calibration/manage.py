#!/usr/bin/env python
"""Command-line entry point: pricing, calibration, studies and the test suite.

    python manage.py price --s0 10 --nu0 0.16
    python manage.py calibrate --sigma0 0.92 --rho0 0.05 --kappa0 5.2 --mu0 0.18 --save
    python manage.py study random --samples 100 --deltas 0.05,0.25 --workers 4
    python manage.py gradcheck
    python manage.py test --exclude-tag slow
"""
import os
import sys


def main():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'heston_calibration.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Install the requirements "
            "(pip install -r requirements.txt) into the active environment."
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
