import sys

from mxray.cli import main

sys.exit(main())
