import sys

from gairlab.cli import main

sys.exit(main())
