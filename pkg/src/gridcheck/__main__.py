import sys

from gridcheck.cli import main

sys.exit(main())
