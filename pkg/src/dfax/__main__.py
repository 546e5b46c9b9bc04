import sys

from dfax.cli import main

sys.exit(main())
