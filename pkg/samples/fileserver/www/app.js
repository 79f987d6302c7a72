console.log("hello from the document root");
