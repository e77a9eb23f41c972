import sys

from flashnorm.cli import main

sys.exit(main())
