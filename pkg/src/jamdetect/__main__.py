from jamdetect.cli import main

main()
