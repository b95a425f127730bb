import sys

from uniqode.cli import main

sys.exit(main())
