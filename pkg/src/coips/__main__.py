from coips.cli import main

raise SystemExit(main())
